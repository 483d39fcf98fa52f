"""Synthetic angiogram-like scenes with exact vessel masks.

Dark tapered vessel trees over a bright, unevenly lit and noisy background.
Used by the demos and end-to-end tests when real angiograms are not at hand.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .featureset import FEATURE_NAMES
from .forest import ForestModel
from .imaging import DatasetEntry, save_gray, save_mask


def _walk(rng, size, start, angle, radius, steps, stamps, depth=0):
    x, y = start
    turn = 0.0
    for k in range(steps):
        turn = 0.85 * turn + rng.normal(0.0, 0.06)
        angle += turn
        x += np.cos(angle)
        y += np.sin(angle)
        if not (-10 <= x < size + 10 and -10 <= y < size + 10):
            return
        r = max(1.0, radius * (1.0 - 0.6 * k / steps))
        stamps.append((x, y, r))
        if depth < 2 and k > 8 and rng.random() < 0.012:
            side = rng.choice([-1.0, 1.0])
            _walk(rng, size, (x, y), angle + side * rng.uniform(0.4, 1.0), r * 0.75,
                  int(steps * 0.6), stamps, depth + 1)


def synthetic_angiogram(size: int = 128, seed: int = 0, n_trees: int = 2,
                        contrast: float = 70.0, noise: float = 6.0):
    """Return ``(image, truth)`` for one synthetic scene."""
    rng = np.random.default_rng(seed)
    stamps = []
    for _ in range(n_trees):
        edge = rng.integers(4)
        t = rng.uniform(0.2, 0.8) * size
        start, angle = {
            0: ((t, 0.0), np.pi / 2),
            1: ((t, size - 1.0), -np.pi / 2),
            2: ((0.0, t), 0.0),
            3: ((size - 1.0, t), np.pi),
        }[int(edge)]
        _walk(rng, size, start, angle + rng.normal(0, 0.3), rng.uniform(2.5, 4.0),
              int(1.6 * size), stamps)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    depth = np.zeros((size, size))
    for x, y, r in stamps:
        x0, x1 = int(max(0, x - r - 1)), int(min(size, x + r + 2))
        y0, y1 = int(max(0, y - r - 1)), int(min(size, y + r + 2))
        if x0 >= x1 or y0 >= y1:
            continue
        d2 = ((xx[y0:y1, x0:x1] - x) ** 2 + (yy[y0:y1, x0:x1] - y) ** 2) / (r * r)
        np.maximum(depth[y0:y1, x0:x1], 1.0 - d2, out=depth[y0:y1, x0:x1])
    truth = depth > 0.0

    gx, gy = rng.normal(0, 1, 2)
    light = 150.0 + 25.0 * (gx * (xx / size - 0.5) + gy * (yy / size - 0.5))
    grain = rng.normal(0.0, noise, (size, size))
    img = light - contrast * np.sqrt(depth) + grain
    return np.clip(img, 0.0, 255.0), truth


def synthetic_dataset(n_images: int = 4, size: int = 96, seed: int = 0):
    """List of :class:`DatasetEntry` with ids ``syn0``, ``syn1``, ..."""
    entries = []
    for k in range(n_images):
        img, truth = synthetic_angiogram(size, seed=seed * 1000 + k)
        entries.append(DatasetEntry(f"syn{k}", img, truth))
    return entries


def write_dataset(entries, directory):
    """Write entries in the ``<id>.png`` / ``<id>_gt.png`` dataset layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for e in entries:
        save_gray(e.image, directory / f"{e.image_id}.png")
        save_mask(e.truth, directory / f"{e.image_id}_gt.png")


# -- hand-built scene for the region-growing engine ---------------------------

BRIGHT, DARK = 200.0, 0.0

WIN_MEAN = FEATURE_NAMES.index("win_mean")
ANISO_1 = FEATURE_NAMES.index("aniso_1")
CONN_IMM = FEATURE_NAMES.index("conn_imm")


def curve_scene():
    """Return ``(image, blob, connected_curve, distractor)`` masks.

    A 9x9 dark blob, a 1-px dark curve leaving it (horizontal run then a
    diagonal), and an isolated 1-px dark curve that touches nothing.
    """
    blob = np.zeros((32, 32), bool)
    blob[3:12, 3:12] = True
    curve = np.zeros((32, 32), bool)
    curve[7, 12:21] = True
    for k in range(1, 8):
        curve[7 + k, 20 + k] = True
    distractor = np.zeros((32, 32), bool)
    distractor[20:30, 5] = True
    img = np.full((32, 32), BRIGHT)
    img[blob | curve | distractor] = DARK
    return img, blob, curve, distractor


def tiered_model(n_features=30):
    """One tree:

    win_mean <= 50            -> 0.95 (seeds)
    else conn_imm <= 0.5      -> 0.10
    else aniso_1 <= 100       -> 0.60 (dark pixel touching a vessel: grows)
    else                      -> 0.10
    """
    feature = np.array([WIN_MEAN, -1, CONN_IMM, -1, ANISO_1, -1, -1], np.int32)
    threshold = np.array([50.0, 0, 0.5, 0, 100.0, 0, 0])
    right = np.array([2, 0, 4, 0, 6, 0, 0], np.int32)
    value = np.array([0, 0.95, 0, 0.1, 0, 0.6, 0.1])
    count = np.ones(7, np.int64)
    return ForestModel(feature, threshold, right, value, count,
                       np.array([0, 7], np.int64), n_features=n_features)


def constant_model(p, n_features=30):
    return ForestModel(np.array([-1], np.int32), np.zeros(1), np.zeros(1, np.int32),
                       np.array([float(p)]), np.ones(1, np.int64), np.array([0, 1], np.int64),
                       n_features=n_features)
