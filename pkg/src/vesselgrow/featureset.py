"""Per-pixel feature vectors, connectivity flags and labelled training tables."""
from __future__ import annotations

import csv
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import filters
from .errors import BoundsError, IoError, ParamError, SchemaError
from .imaging import DatasetEntry

N_GREY = 28
N_FEATURES = 30
IMMEDIATE, RADIAL = 28, 29
RADIAL_RADIUS = 7
# fraction of training rows trained with connectivity zeroed, see build_training_rows
DEFAULT_CONN_DROPOUT = 0.25

DIFFUSION_CONFIGS = (
    filters.DiffusionParams(lam=0.3, kappa=4.0, iterations=20),
    filters.DiffusionParams(lam=0.5, kappa=3.0, iterations=10),
    filters.DiffusionParams(lam=2.0, kappa=3.0, iterations=35),
    filters.DiffusionParams(lam=0.8, kappa=6.0, iterations=40),
)
# (structuring element, dilations j, erosions i)
MORPH_CONFIGS = (
    ("B1", 1, 1), ("B1", 1, 3), ("B1", 3, 1),
    ("B2", 1, 1), ("B2", 1, 3), ("B2", 3, 1),
)
KUWAHARA_RADII = (5, 10)
LIGHT_SOBEL_CONFIGS = ((-10.0, 2), (-10.0, 5))

FEATURE_NAMES = (
    *filters.HESSIAN_NAMES,
    "win_mean", "win_max", "win_min", "win_med",
    "aniso_1", "aniso_2", "aniso_3", "aniso_4",
    "morph_1", "morph_2", "morph_3", "morph_4", "morph_5", "morph_6",
    "kuw_11", "kuw_21",
    "lsobel_d2", "lsobel_d5",
    "conn_imm", "conn_rad",
)
GREY_NAMES = FEATURE_NAMES[:N_GREY]
CSV_HEADER = (*FEATURE_NAMES, "label", "image_id", "x", "y")


@dataclass(frozen=True)
class FeatureStack:
    """The 28 grey-level planes of one image, shape ``(28, H, W)``."""

    planes: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        if self.planes.ndim != 3 or self.planes.shape[0] != N_GREY:
            raise ValueError(f"expected (28, H, W) planes, got {self.planes.shape}")

    @property
    def shape(self):
        return self.planes.shape[1:]

    def plane(self, name: str) -> np.ndarray:
        return self.planes[GREY_NAMES.index(name)]

    def pixel_matrix(self) -> np.ndarray:
        """Raster-ordered ``(H*W, 28)`` C-contiguous feature matrix."""
        return np.ascontiguousarray(self.planes.reshape(N_GREY, -1).T)


@dataclass
class LabeledDataset:
    """Columnar table of feature rows with labels and pixel provenance."""

    X: np.ndarray
    label: np.ndarray
    image_id: np.ndarray
    x: np.ndarray
    y: np.ndarray
    feature_names: tuple = field(default=FEATURE_NAMES)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, N_FEATURES)
        n = len(self.X)
        self.label = np.asarray(self.label, dtype=bool).reshape(n)
        self.image_id = np.asarray(self.image_id, dtype=str).reshape(n)
        self.x = np.asarray(self.x, dtype=np.int64).reshape(n)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(n)
        if len(self.feature_names) != N_FEATURES:
            raise SchemaError(f"need {N_FEATURES} feature names, got {len(self.feature_names)}")
        self.feature_names = tuple(self.feature_names)

    def __len__(self):
        return len(self.X)

    @classmethod
    def empty(cls):
        return cls(np.empty((0, N_FEATURES)), [], [], [], [])

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.label for p in parts]),
            np.concatenate([p.image_id for p in parts]),
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
        )

    def equals(self, other) -> bool:
        return (
            self.feature_names == other.feature_names
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.label, other.label)
            and np.array_equal(self.image_id, other.image_id)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


def extract_stack(img, source_id: str = "") -> FeatureStack:
    """Run the full filter bank with the fixed feature configurations."""
    img = np.asarray(img, dtype=np.float64)
    planes = [filters.hessian_planes(img), filters.window_stats(img, 7)]
    planes.append(np.stack([filters.anisotropic_diffusion(img, p) for p in DIFFUSION_CONFIGS]))
    elements = {"B1": filters.make_b1(), "B2": filters.make_b2()}
    planes.append(np.stack([
        filters.morph_feature(img, elements[name], j, i) for name, j, i in MORPH_CONFIGS
    ]))
    planes.append(np.stack([filters.kuwahara(img, a) for a in KUWAHARA_RADII]))
    planes.append(np.stack([filters.light_sobel(img, t, d) for t, d in LIGHT_SOBEL_CONFIGS]))
    return FeatureStack(np.concatenate(planes), source_id)


# -- connectivity -------------------------------------------------------------

def disc_offsets(radius: int = RADIAL_RADIUS):
    """Integer offsets within Euclidean ``radius``, centre excluded."""
    r = int(radius)
    return [
        (dx, dy)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if 0 < dx * dx + dy * dy <= r * r
    ]


RING_OFFSETS = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dx or dy]


def _any_at_offsets(mask: np.ndarray, offsets) -> np.ndarray:
    # pixels outside the image never count as vessel
    r = max(max(abs(dx), abs(dy)) for dx, dy in offsets)
    h, w = mask.shape
    p = np.zeros((h + 2 * r, w + 2 * r), dtype=bool)
    p[r:r + h, r:r + w] = mask
    out = np.zeros_like(mask, dtype=bool)
    for dx, dy in offsets:
        out |= p[r + dy:r + dy + h, r + dx:r + dx + w]
    return out


def connectivity_planes(vessel: np.ndarray, radius: int = RADIAL_RADIUS):
    """Immediate and radial connectivity flags for every pixel of a vessel mask."""
    vessel = np.asarray(vessel, dtype=bool)
    return (
        _any_at_offsets(vessel, RING_OFFSETS).astype(np.float64),
        _any_at_offsets(vessel, disc_offsets(radius)).astype(np.float64),
    )


def truth_connectivity(truth: np.ndarray, x: int, y: int, radius: int = RADIAL_RADIUS):
    """``(immediate, radial)`` flags at one pixel, read from a ground-truth mask."""
    h, w = truth.shape
    if not (0 <= x < w and 0 <= y < h):
        raise BoundsError(f"pixel ({x}, {y}) outside {w}x{h} image")
    imm = rad = 0
    for dx, dy in disc_offsets(radius):
        qx, qy = x + dx, y + dy
        if 0 <= qx < w and 0 <= qy < h and truth[qy, qx]:
            rad = 1
            if max(abs(dx), abs(dy)) == 1:
                imm = 1
                break
    return imm, rad


# -- training rows ------------------------------------------------------------

def image_seed(seed: int, image_id: str) -> list[int]:
    """Per-image seed material, independent of the order images are visited."""
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(image_id.encode("utf-8"))]


def select_pixels(truth: np.ndarray, subsample: float, seed, balanced: bool = False):
    """Flat raster indices retained for training."""
    if not 0.0 < subsample <= 1.0:
        raise ParamError(f"subsample must lie in (0, 1], got {subsample}")
    flat = np.asarray(truth, dtype=bool).ravel()
    n = flat.size
    if not balanced:
        if subsample == 1.0:
            return np.arange(n)
        rng = np.random.default_rng(seed)
        return np.flatnonzero(rng.random(n) < subsample)
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(flat)
    neg = np.flatnonzero(~flat)
    k = min(len(pos), len(neg), int(round(subsample * n / 2)))
    keep = np.concatenate([
        rng.choice(pos, size=k, replace=False),
        rng.choice(neg, size=k, replace=False),
    ])
    return np.sort(keep)


def build_training_rows(
    entry: DatasetEntry,
    subsample: float = 1.0,
    seed: int = 0,
    stack: FeatureStack | None = None,
    balanced: bool = False,
    connectivity: bool = True,
    conn_dropout: float = 0.0,
) -> LabeledDataset:
    """Labelled rows for one image, connectivity taken from its ground truth.

    Rows come out in raster order. ``connectivity=False`` zeroes the two
    connectivity columns (ablation). ``conn_dropout`` zeroes them on that
    fraction of rows, chosen at random, so the classifier also sees vessel
    pixels without vessel neighbours (the state seeding starts from).
    """
    if not 0.0 <= conn_dropout <= 1.0:
        raise ParamError(f"conn_dropout must lie in [0, 1], got {conn_dropout}")
    if stack is None:
        stack = extract_stack(entry.image, entry.image_id)
    idx = select_pixels(entry.truth, subsample, image_seed(seed, entry.image_id), balanced)
    h, w = entry.truth.shape
    X = np.zeros((len(idx), N_FEATURES))
    X[:, :N_GREY] = stack.planes.reshape(N_GREY, -1)[:, idx].T
    if connectivity:
        imm, rad = connectivity_planes(entry.truth)
        X[:, IMMEDIATE] = imm.ravel()[idx]
        X[:, RADIAL] = rad.ravel()[idx]
        if conn_dropout > 0.0:
            rng = np.random.default_rng([*image_seed(seed, entry.image_id), 1])
            _drop_rows(X, rng.random(len(idx)) < conn_dropout)
    ys, xs = np.divmod(idx, w)
    return LabeledDataset(
        X, entry.truth.ravel()[idx], np.full(len(idx), entry.image_id), xs, ys
    )


def _drop_rows(X, drop):
    X[drop, IMMEDIATE] = 0.0
    X[drop, RADIAL] = 0.0


def drop_connectivity(ds: LabeledDataset, rate: float, seed: int = 0) -> LabeledDataset:
    """Copy of ``ds`` with the connectivity flags zeroed on a random ``rate`` of rows."""
    if not 0.0 <= rate <= 1.0:
        raise ParamError(f"dropout rate must lie in [0, 1], got {rate}")
    X = ds.X.copy()
    if rate == 1.0:
        X[:, [IMMEDIATE, RADIAL]] = 0.0
    elif rate > 0.0:
        _drop_rows(X, np.random.default_rng([int(seed), 1]).random(len(X)) < rate)
    return LabeledDataset(X, ds.label, ds.image_id, ds.x, ds.y, ds.feature_names)


def grey_plane(img, name: str) -> np.ndarray:
    """Compute a single named grey-level feature plane."""
    if name not in GREY_NAMES:
        raise KeyError(name)
    k = GREY_NAMES.index(name)
    img = np.asarray(img, dtype=np.float64)
    if k < 10:
        return filters.hessian_planes(img)[k]
    if k < 14:
        return filters.window_stats(img, 7)[k - 10]
    if k < 18:
        return filters.anisotropic_diffusion(img, DIFFUSION_CONFIGS[k - 14])
    if k < 24:
        se_name, j, i = MORPH_CONFIGS[k - 18]
        se = filters.make_b1() if se_name == "B1" else filters.make_b2()
        return filters.morph_feature(img, se, j, i)
    if k < 26:
        return filters.kuwahara(img, KUWAHARA_RADII[k - 24])
    t, d = LIGHT_SOBEL_CONFIGS[k - 26]
    return filters.light_sobel(img, t, d)


# -- CSV ----------------------------------------------------------------------

def write_csv(ds: LabeledDataset, path):
    """Write ``ds`` with round-trip float precision; replaces ``path`` atomically."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row, lab, iid, x, y in zip(
                ds.X.tolist(), ds.label.tolist(), ds.image_id.tolist(),
                ds.x.tolist(), ds.y.tolist(),
            ):
                writer.writerow([*map(repr, row), int(lab), iid, x, y])
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_csv(path) -> LabeledDataset:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise SchemaError(
                f"{path}: header does not match the {N_FEATURES}-feature schema"
            )
        X, label, iid, xs, ys = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise SchemaError(
                    f"{path}:{lineno}: expected {len(CSV_HEADER)} columns, got {len(row)}"
                )
            try:
                X.append([float(v) for v in row[:N_FEATURES]])
                label.append(int(row[N_FEATURES]) != 0)
                xs.append(int(row[N_FEATURES + 2]))
                ys.append(int(row[N_FEATURES + 3]))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            iid.append(row[N_FEATURES + 1])
    if not X:
        return LabeledDataset.empty()
    return LabeledDataset(np.array(X), label, iid, xs, ys)
