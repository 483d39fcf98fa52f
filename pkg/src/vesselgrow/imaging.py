"""Image containers, PNG/PGM decoding, border reflection and dataset ingestion.

Grey images are plain ``float64`` arrays of shape ``(height, width)`` with
intensities in ``[0, 255]``; binary masks are ``bool`` arrays of the same
shape with ``True`` marking vessel pixels. Indexing is ``img[y, x]``.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionError, FormatError, IoError, PairingError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
TRUTH_THRESHOLD = 128.0


@dataclass(frozen=True)
class DatasetEntry:
    image_id: str
    image: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        if self.image.shape != self.truth.shape:
            raise DimensionError(
                f"{self.image_id}: image {self.image.shape} vs truth {self.truth.shape}"
            )


def as_gray(data) -> np.ndarray:
    """Validate and convert ``data`` to a read-only grey image array."""
    img = np.array(data, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise DimensionError(f"expected a non-empty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 255.0:
        raise ValueError("grey intensities must lie in [0, 255]")
    img.setflags(write=False)
    return img


def reflect_index(i, n: int):
    """Map coordinates onto ``[0, n)`` by mirror reflection without repeating the edge.

    Works on scalars and integer arrays; coordinates arbitrarily far outside
    are folded repeatedly (period ``2 * (n - 1)``).
    """
    if n == 1:
        return np.zeros_like(i) if isinstance(i, np.ndarray) else 0
    period = 2 * (n - 1)
    i = np.mod(i, period)
    return np.where(i >= n, period - i, i) if isinstance(i, np.ndarray) else (
        period - i if i >= n else i
    )


def sample_reflected(img: np.ndarray, x: int, y: int) -> float:
    """Return ``img`` at ``(x, y)``, reflecting out-of-range coordinates."""
    h, w = img.shape
    return float(img[reflect_index(int(y), h), reflect_index(int(x), w)])


def pad_reflect(img: np.ndarray, pad_y: int, pad_x: int | None = None) -> np.ndarray:
    """Pad with the same reflection rule as :func:`sample_reflected`."""
    if pad_x is None:
        pad_x = pad_y
    h, w = img.shape
    rows = reflect_index(np.arange(-pad_y, h + pad_y), h)
    cols = reflect_index(np.arange(-pad_x, w + pad_x), w)
    return img[np.ix_(rows, cols)]


def shifted(padded: np.ndarray, pad: int, dx: int, dy: int, shape) -> np.ndarray:
    """View of ``padded`` aligned so element ``[y, x]`` is the source at ``(x+dx, y+dy)``."""
    h, w = shape
    return padded[pad + dy:pad + dy + h, pad + dx:pad + dx + w]


# -- decoding -----------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(#[^\n]*\n?)|(\S+)")


def _read_pgm(raw: bytes, path) -> np.ndarray:
    magic = raw[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a P2/P5 PGM file")
    header = []
    pos = 2
    for match in _PGM_TOKEN.finditer(raw, 2):
        if match.group(2) is None:
            continue
        header.append(int(match.group(2)))
        pos = match.end()
        if len(header) == 3:
            break
    if len(header) != 3:
        raise FormatError(f"{path}: truncated PGM header")
    width, height, maxval = header
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid PGM header {header}")
    count = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        body = raw[pos + 1:]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(body) < count * dtype.itemsize:
            raise FormatError(f"{path}: truncated PGM raster")
        values = np.frombuffer(body, dtype=dtype, count=count).astype(np.float64)
    else:
        tokens = raw[pos:].split()
        if len(tokens) < count:
            raise FormatError(f"{path}: truncated PGM raster")
        values = np.array([int(t) for t in tokens[:count]], dtype=np.float64)
    if values.max(initial=0) > maxval:
        raise FormatError(f"{path}: sample exceeds maxval {maxval}")
    if maxval != 255:
        values = values * (255.0 / maxval)
    return values.reshape(height, width)


def _decode_pil(im: Image.Image, path) -> np.ndarray:
    mode = im.mode
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        # Pillow decodes 16-bit greyscale PNG into one of these modes
        return np.asarray(im, dtype=np.float64) * (255.0 / 65535.0)
    if mode in ("L", "LA"):
        return np.asarray(im.convert("L"), dtype=np.float64)
    if mode == "1":
        return np.asarray(im.convert("L"), dtype=np.float64)
    if mode in ("RGB", "RGBA", "P", "PA"):
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
        r, g, b = LUMA_WEIGHTS
        return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]
    raise FormatError(f"{path}: unsupported image mode {mode!r}")


def load_gray(path) -> np.ndarray:
    """Load a PNG or PGM file as a grey image in ``[0, 255]``.

    Colour inputs are reduced with BT.601 luma weights and 16-bit inputs are
    rescaled linearly.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if raw[:2] in (b"P2", b"P5"):
        data = _read_pgm(raw, path)
    elif raw[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            with Image.open(path) as im:
                im.load()
                data = _decode_pil(im, path)
        except (OSError, SyntaxError) as exc:
            raise FormatError(f"{path}: cannot decode PNG: {exc}") from exc
    else:
        raise FormatError(f"{path}: expected PNG or PGM data")
    return as_gray(np.clip(data, 0.0, 255.0))


# -- encoding -----------------------------------------------------------------

def _atomic_save(im: Image.Image, path: Path):
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        im.save(tmp, format="PNG")
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def save_mask(mask: np.ndarray, path):
    """Write a vessel mask as an 8-bit PNG with vessel = 255 and background = 0."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be 2-D, got shape {mask.shape}")
    _atomic_save(Image.fromarray(mask.astype(np.uint8) * 255, mode="L"), Path(path))


def save_gray(img: np.ndarray, path):
    """Write a grey image as an 8-bit PNG, rounding to the nearest level."""
    data = np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)
    _atomic_save(Image.fromarray(data, mode="L"), Path(path))


def save_proba16(proba: np.ndarray, path):
    """Write a probability plane as a 16-bit PNG scaled by 65535."""
    data = np.rint(np.clip(np.asarray(proba, dtype=np.float64), 0.0, 1.0) * 65535.0)
    im = Image.fromarray(data.astype(np.uint16))
    _atomic_save(im, Path(path))


def threshold_mask(img: np.ndarray, level: float = TRUTH_THRESHOLD) -> np.ndarray:
    return np.asarray(img) >= level


# -- dataset ------------------------------------------------------------------

def load_dataset(directory) -> list[DatasetEntry]:
    """Load ``<id>.png`` / ``<id>_gt.png`` pairs from ``directory``, sorted by id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"not a directory: {directory}")
    images, truths = {}, {}
    for p in directory.iterdir():
        if p.suffix.lower() not in (".png", ".pgm") or not p.is_file():
            continue
        stem = p.stem
        if stem.endswith("_gt"):
            truths[stem[:-3]] = p
        else:
            images[stem] = p
    orphans = sorted(set(images) ^ set(truths))
    if orphans:
        raise PairingError(f"unpaired dataset files for ids: {', '.join(orphans)}")
    entries = []
    for image_id in sorted(images):
        img = load_gray(images[image_id])
        truth = threshold_mask(load_gray(truths[image_id]))
        if img.shape != truth.shape:
            raise DimensionError(
                f"{image_id}: image {img.shape[1]}x{img.shape[0]} but truth "
                f"{truth.shape[1]}x{truth.shape[0]}"
            )
        truth.setflags(write=False)
        entries.append(DatasetEntry(image_id, img, truth))
    return entries
