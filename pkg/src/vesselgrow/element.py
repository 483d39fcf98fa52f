"""Region-growing pixel classification driven by live connectivity features.

Classification runs in two phases over one image:

1. Seeding: every pixel is classified with both connectivity flags at 0.
   Pixels at or above ``seed_threshold`` become vessel and their 8-neighbours
   are queued.
2. Growth: the FIFO frontier is drained. Each unresolved pixel is classified
   with connectivity read from the current labels; at or above
   ``grow_threshold`` it becomes vessel and queues its unresolved neighbours,
   otherwise it becomes background for good.

Pixels the frontier never reaches fall back to their phase-1 probability
thresholded at ``grow_threshold``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import BoundsError, DimensionError, ParamError
from .featureset import N_FEATURES, RING_OFFSETS, FeatureStack, disc_offsets, extract_stack
from .forest import ForestModel, _predict_one

UNRESOLVED, VESSEL, BACKGROUND = 0, 1, 2
SEEDED, GROWN, FALLBACK = 1, 2, 3


@dataclass(frozen=True)
class ElementParams:
    seed_threshold: float = 0.9
    grow_threshold: float = 0.5
    radial_radius: int = 7
    # False forces both connectivity features to 0 (ablation runs)
    connectivity: bool = True

    def __post_init__(self):
        if not 0.5 < self.seed_threshold <= 1.0:
            raise ParamError(f"seed_threshold must lie in (0.5, 1], got {self.seed_threshold}")
        if self.grow_threshold > self.seed_threshold:
            raise ParamError("grow_threshold must not exceed seed_threshold")
        if self.radial_radius < 1:
            raise ParamError(f"radial_radius must be >= 1, got {self.radial_radius}")


@dataclass
class SegmentationState:
    """Tri-state label map, last classifier output per pixel, and the frontier."""

    labels: np.ndarray
    proba: np.ndarray
    frontier: deque = field(default_factory=deque)
    radial_radius: int = 7

    @classmethod
    def blank(cls, shape, radial_radius: int = 7):
        return cls(np.zeros(shape, dtype=np.int8), np.zeros(shape), deque(), radial_radius)


def state_connectivity(state: SegmentationState, x: int, y: int):
    """``(immediate, radial)`` flags from the vessel pixels currently in ``state``."""
    h, w = state.labels.shape
    if not (0 <= x < w and 0 <= y < h):
        raise BoundsError(f"pixel ({x}, {y}) outside {w}x{h} image")
    imm = rad = 0
    for dx, dy in disc_offsets(state.radial_radius):
        qx, qy = x + dx, y + dy
        if 0 <= qx < w and 0 <= qy < h and state.labels[qy, qx] == VESSEL:
            rad = 1
            if max(abs(dx), abs(dy)) == 1:
                imm = 1
                break
    return imm, rad


@dataclass
class ElementResult:
    mask: np.ndarray
    proba: np.ndarray
    state: SegmentationState
    phase1_proba: np.ndarray
    # SEEDED / GROWN / FALLBACK for vessel pixels, 0 otherwise
    decided_by: np.ndarray
    # immediate flag seen when a pixel was classified in phase 2
    immediate_at_growth: np.ndarray
    classifier_calls: int


@njit(cache=True)
def _mark_vessel(i, w, h, labels, imm_count, rad_count, ring, disc):
    labels[i] = VESSEL
    y, x = divmod(i, w)
    for k in range(ring.shape[0]):
        qx = x + ring[k, 0]
        qy = y + ring[k, 1]
        if 0 <= qx < w and 0 <= qy < h:
            imm_count[qy * w + qx] += 1
    for k in range(disc.shape[0]):
        qx = x + disc[k, 0]
        qy = y + disc[k, 1]
        if 0 <= qx < w and 0 <= qy < h:
            rad_count[qy * w + qx] += 1


@njit(cache=True)
def _enqueue_neighbours(i, w, h, labels, queued, queue, tail, ring):
    y, x = divmod(i, w)
    for k in range(ring.shape[0]):
        qx = x + ring[k, 0]
        qy = y + ring[k, 1]
        if 0 <= qx < w and 0 <= qy < h:
            j = qy * w + qx
            if labels[j] == UNRESOLVED and not queued[j]:
                queued[j] = True
                queue[tail] = j
                tail += 1
    return tail


@njit(cache=True)
def _run(grey, h, w, feature, threshold, right, value, offsets,
         seed_thr, grow_thr, ring, disc, use_conn):
    n = h * w
    labels = np.zeros(n, dtype=np.int8)
    decided = np.zeros(n, dtype=np.int8)
    imm_seen = np.zeros(n, dtype=np.bool_)
    imm_count = np.zeros(n, dtype=np.int32)
    rad_count = np.zeros(n, dtype=np.int32)
    x = np.zeros(grey.shape[1] + 2)
    calls = 0

    p1 = np.empty(n)
    for i in range(n):
        x[:grey.shape[1]] = grey[i]
        x[-2] = 0.0
        x[-1] = 0.0
        p1[i] = _predict_one(x, feature, threshold, right, value, offsets)
        calls += 1
    proba = p1.copy()

    for i in range(n):
        if p1[i] >= seed_thr:
            _mark_vessel(i, w, h, labels, imm_count, rad_count, ring, disc)
            decided[i] = SEEDED

    queue = np.empty(n, dtype=np.int64)
    queued = np.zeros(n, dtype=np.bool_)
    head = 0
    tail = 0
    for i in range(n):
        if labels[i] == VESSEL:
            tail = _enqueue_neighbours(i, w, h, labels, queued, queue, tail, ring)

    while head < tail:
        i = queue[head]
        head += 1
        if labels[i] != UNRESOLVED:
            continue
        x[:grey.shape[1]] = grey[i]
        if use_conn:
            x[-2] = 1.0 if imm_count[i] > 0 else 0.0
            x[-1] = 1.0 if rad_count[i] > 0 else 0.0
        imm_seen[i] = imm_count[i] > 0
        p = _predict_one(x, feature, threshold, right, value, offsets)
        calls += 1
        proba[i] = p
        if p >= grow_thr:
            _mark_vessel(i, w, h, labels, imm_count, rad_count, ring, disc)
            decided[i] = GROWN
            tail = _enqueue_neighbours(i, w, h, labels, queued, queue, tail, ring)
        else:
            labels[i] = BACKGROUND

    for i in range(n):
        if labels[i] == UNRESOLVED:
            if p1[i] >= grow_thr:
                labels[i] = VESSEL
                decided[i] = FALLBACK
            else:
                labels[i] = BACKGROUND
    return labels, proba, p1, decided, imm_seen, calls


def segment_detailed(img, model: ForestModel, params: ElementParams = ElementParams(),
                     stack: FeatureStack | None = None) -> ElementResult:
    """Run the two-phase engine and return the full instrumented result."""
    if model.n_features != N_FEATURES:
        raise DimensionError(
            f"model uses {model.n_features} features; segmentation needs {N_FEATURES}"
        )
    if stack is None:
        stack = extract_stack(img)
    h, w = stack.shape
    if img is not None and np.shape(img) != (h, w):
        raise DimensionError(f"image {np.shape(img)} does not match feature stack {(h, w)}")
    grey = stack.pixel_matrix()
    ring = np.array(RING_OFFSETS, dtype=np.int64)
    disc = np.array(disc_offsets(params.radial_radius), dtype=np.int64)
    labels, proba, p1, decided, imm_seen, calls = _run(
        grey, h, w, model.feature, model.threshold, model.right, model.value, model.offsets,
        float(params.seed_threshold), float(params.grow_threshold), ring, disc,
        bool(params.connectivity),
    )
    labels = labels.reshape(h, w)
    proba = proba.reshape(h, w)
    state = SegmentationState(labels, proba, deque(), params.radial_radius)
    return ElementResult(
        mask=labels == VESSEL,
        proba=proba,
        state=state,
        phase1_proba=p1.reshape(h, w),
        decided_by=decided.reshape(h, w),
        immediate_at_growth=imm_seen.reshape(h, w),
        classifier_calls=int(calls),
    )


def segment(img, model: ForestModel, params: ElementParams = ElementParams(),
            stack: FeatureStack | None = None):
    """Segment one image; returns ``(vessel_mask, probability_plane)``."""
    res = segment_detailed(img, model, params, stack)
    return res.mask, res.proba
