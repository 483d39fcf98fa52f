"""Whole-image grey-level filters behind the 28 feature planes.

Every windowed operation samples outside the image by mirror reflection
without repeating the border pixel (see :func:`vesselgrow.imaging.pad_reflect`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParamError
from .imaging import pad_reflect, shifted


def _check_image(img, min_side=1) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got shape {img.shape}")
    if min(img.shape) < min_side:
        raise DimensionError(
            f"image must be at least {min_side}x{min_side}, got {img.shape[1]}x{img.shape[0]}"
        )
    return img


# -- Hessian ------------------------------------------------------------------

HESSIAN_NAMES = (
    "hess_det", "hess_a", "hess_b", "hess_c", "hess_d",
    "hess_l1", "hess_l2", "hess_gamma", "hess_mod", "hess_tr",
)


def hessian_coefficients(img):
    """Second derivatives ``(Ixx, Ixy, Iyx, Iyy)`` by finite differences.

    ``Ixx`` and ``Iyy`` use the ``[1, -2, 1]`` stencil; the cross derivative
    composes two ``[-1, 0, 1] / 2`` central differences, so ``Ixy == Iyx``.
    """
    img = _check_image(img, 3)
    p = pad_reflect(img, 1)
    at = lambda dx, dy: shifted(p, 1, dx, dy, img.shape)  # noqa: E731
    a = at(1, 0) - 2.0 * img + at(-1, 0)
    d = at(0, 1) - 2.0 * img + at(0, -1)
    b = ((at(1, 1) - at(-1, 1)) - (at(1, -1) - at(-1, -1))) / 4.0
    return a, b, b.copy(), d


def hessian_features(a, b, c, d, t: float = 1.0):
    """Evaluate the ten Hessian features from raw matrix entries.

    Accepts scalars or equally shaped arrays. Returns ``(planes, n_negative)``
    where ``planes`` is a tuple in the order of :data:`HESSIAN_NAMES` and
    ``n_negative`` counts entries whose eigenvalue or modulus radicand was
    negative (those entries are emitted as 0).
    """
    a, b, c, d = (np.asarray(v, dtype=np.float64) for v in (a, b, c, d))
    det = a * d - c * b
    trace = a + d
    disc = a * a - 2.0 * a * d + 4.0 * b * c + d * d
    bad_disc = disc < 0
    root = np.sqrt(np.where(bad_disc, 0.0, disc))
    lam1 = np.where(bad_disc, 0.0, (trace - root) / 2.0)
    lam2 = np.where(bad_disc, 0.0, (trace + root) / 2.0)
    diff = a - d
    gamma = t ** 4 * diff * diff * (diff * diff + 4.0 * b * b)
    mod_sq = a * a + b * c + d * d
    bad_mod = mod_sq < 0
    modulus = np.sqrt(np.where(bad_mod, 0.0, mod_sq))
    n_negative = int(np.count_nonzero(bad_disc)) + int(np.count_nonzero(bad_mod))
    return (det, a, b, c, d, lam1, lam2, gamma, modulus, trace), n_negative


def hessian_planes(img, return_diagnostics: bool = False):
    """Stack of the ten unclamped Hessian planes, shape ``(10, H, W)``."""
    planes, n_negative = hessian_features(*hessian_coefficients(img))
    stack = np.stack([np.broadcast_to(p, planes[0].shape) for p in planes])
    if return_diagnostics:
        return stack, n_negative
    return stack


# -- window statistics --------------------------------------------------------

def window_stats(img, size: int = 7, chunk_rows: int = 64):
    """Mean, max, min and median over a ``size x size`` window, shape ``(4, H, W)``."""
    if size < 3 or size % 2 == 0:
        raise ParamError(f"window size must be odd and >= 3, got {size}")
    img = _check_image(img)
    r = size // 2
    h, w = img.shape
    p = pad_reflect(img, r)

    total = np.zeros_like(img)
    hi = img.copy()
    lo = img.copy()
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            v = shifted(p, r, dx, dy, img.shape)
            total += v
            np.maximum(hi, v, out=hi)
            np.minimum(lo, v, out=lo)
    mean = total / (size * size)

    k = (size * size - 1) // 2
    med = np.empty_like(img)
    for y0 in range(0, h, chunk_rows):
        y1 = min(h, y0 + chunk_rows)
        win = sliding_window_view(p[y0:y1 + 2 * r], (size, size)).reshape(y1 - y0, w, -1)
        med[y0:y1] = np.partition(win, k, axis=-1)[..., k]
    return np.stack([mean, hi, lo, med])


# -- anisotropic diffusion ----------------------------------------------------

@dataclass(frozen=True)
class DiffusionParams:
    lam: float
    kappa: float
    iterations: int

    def __post_init__(self):
        if not self.kappa > 0:
            raise ParamError(f"kappa must be > 0, got {self.kappa}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ParamError(f"iterations must be a positive integer, got {self.iterations}")
        if not 0.0 <= self.lam <= 2.0:
            raise ParamError(f"lambda must lie in [0, 2], got {self.lam}")


@njit(cache=True)
def _diffusion_sweep(p, lam, kappa, out):
    # p is the previous sweep padded by one reflected pixel on every side;
    # scalar libm exp keeps results independent of SIMD exp approximations
    h, w = out.shape
    for y in range(h):
        for x in range(w):
            c = p[y + 1, x + 1]
            total = 0.0
            for dx, dy in ((0, -1), (0, 1), (-1, 0), (1, 0)):
                g = p[y + 1 + dy, x + 1 + dx] - c
                r = g / kappa
                total += math.exp(-(r * r)) * g
            v = c + lam * total
            out[y, x] = min(255.0, max(0.0, v))


def anisotropic_diffusion(img, params: DiffusionParams):
    """Perona-Malik diffusion with conductance ``exp(-(grad / kappa)**2)``.

    Sweeps are synchronous (every pixel reads the previous sweep) and each
    sweep is clamped to ``[0, 255]``.
    """
    cur = _check_image(img).copy()
    lam, kappa = float(params.lam), float(params.kappa)
    for _ in range(int(params.iterations)):
        nxt = np.empty_like(cur)
        _diffusion_sweep(pad_reflect(cur, 1), lam, kappa, nxt)
        cur = nxt
    return cur


# -- morphology ---------------------------------------------------------------

@dataclass(frozen=True)
class StructuringElement:
    """Flat structuring element given by its support offsets ``(dx, dy)``."""

    offsets: tuple
    name: str = "custom"

    def __post_init__(self):
        offs = tuple(sorted({(int(dx), int(dy)) for dx, dy in self.offsets}))
        if not offs:
            raise ParamError("structuring element needs at least one offset")
        object.__setattr__(self, "offsets", offs)

    @property
    def radius(self) -> int:
        return max(max(abs(dx), abs(dy)) for dx, dy in self.offsets)

    def is_symmetric(self) -> bool:
        s = set(self.offsets)
        return all((-dx, -dy) in s for dx, dy in s)


def make_b1() -> StructuringElement:
    """3x3 plus-shaped element."""
    return StructuringElement(((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)), "B1")


def make_b2() -> StructuringElement:
    """Disc of radius 5 on an 11x11 grid (81 offsets)."""
    offs = [(dx, dy) for dy in range(-5, 6) for dx in range(-5, 6) if dx * dx + dy * dy <= 25]
    return StructuringElement(tuple(offs), "B2")


def _extremum(img, offsets, reduce):
    r = max(max(abs(dx), abs(dy)) for dx, dy in offsets)
    p = pad_reflect(img, r)
    out = None
    for dx, dy in offsets:
        v = shifted(p, r, dx, dy, img.shape)
        out = v.copy() if out is None else reduce(out, v, out=out)
    return out


def gray_dilate(img, se: StructuringElement):
    """Flat grey dilation: max of the image translated by every offset of ``se``."""
    img = _check_image(img)
    return np.clip(_extremum(img, se.offsets, np.maximum), 0.0, 255.0)


def gray_erode(img, se: StructuringElement):
    """Flat grey erosion: min over the reflected (negated) offsets of ``se``."""
    img = _check_image(img)
    neg = [(-dx, -dy) for dx, dy in se.offsets]
    return np.clip(_extremum(img, neg, np.minimum), 0.0, 255.0)


def morph_feature(img, se: StructuringElement, j: int, i: int):
    """Apply ``j`` dilations followed by ``i`` erosions."""
    if i < 0 or j < 0 or i + j < 1:
        raise ParamError(f"need i, j >= 0 and i + j >= 1, got j={j}, i={i}")
    out = _check_image(img)
    for _ in range(j):
        out = gray_dilate(out, se)
    for _ in range(i):
        out = gray_erode(out, se)
    return out


# -- Kuwahara -----------------------------------------------------------------

def _box_sums(integral, x0, y0, side):
    """Sums over ``side x side`` boxes with top-left corners at padded ``(x0, y0)``."""
    return (
        integral[y0 + side, x0 + side]
        - integral[y0, x0 + side]
        - integral[y0 + side, x0]
        + integral[y0, x0]
    )


def kuwahara(img, a: int):
    """Kuwahara filter on a ``(2a+1)`` window with four ``(a+1)``-wide quadrants.

    Each pixel takes the mean of the quadrant with the smallest population
    standard deviation; ties go to the lowest quadrant index. Quadrant order:
    1 = right/below, 2 = left/below, 3 = left/above, 4 = right/above.
    """
    if int(a) != a or a < 1:
        raise ParamError(f"kuwahara radius must be a positive integer, got {a}")
    a = int(a)
    img = _check_image(img)
    h, w = img.shape
    p = pad_reflect(img, a)
    s1 = np.zeros((p.shape[0] + 1, p.shape[1] + 1))
    s2 = np.zeros_like(s1)
    s1[1:, 1:] = p.cumsum(0).cumsum(1)
    s2[1:, 1:] = (p * p).cumsum(0).cumsum(1)

    ys, xs = np.mgrid[0:h, 0:w]
    xs = xs + a
    ys = ys + a
    side = a + 1
    n = float(side * side)
    corners = (  # top-left corner of quadrants 1..4 in padded coordinates
        (xs, ys),
        (xs - a, ys),
        (xs - a, ys - a),
        (xs, ys - a),
    )
    means = np.empty((4, h, w))
    spread = np.empty((4, h, w))
    for q, (x0, y0) in enumerate(corners):
        sm = _box_sums(s1, x0, y0, side)
        sq = _box_sums(s2, x0, y0, side)
        means[q] = sm / n
        # n^2 * variance, exact for integer-valued input
        spread[q] = n * sq - sm * sm
    best = np.argmin(spread, axis=0)
    out = np.take_along_axis(means, best[None], axis=0)[0]
    return np.clip(out, 0.0, 255.0)


# -- Light Sobel --------------------------------------------------------------

def light_sobel(img, t: float, d: int):
    """1 where the pixel exceeds its four distance-``d`` axial neighbours by more than ``t``."""
    if int(d) != d or d < 1:
        raise ParamError(f"distance must be a positive integer, got {d}")
    d = int(d)
    img = _check_image(img)
    p = pad_reflect(img, d)
    at = lambda dx, dy: shifted(p, d, dx, dy, img.shape)  # noqa: E731
    vertical = ((img - at(0, -d)) > t) & ((img - at(0, d)) > t)
    horizontal = ((img - at(-d, 0)) > t) & ((img - at(d, 0)) > t)
    return (vertical & horizontal).astype(np.float64)
