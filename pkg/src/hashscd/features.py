"""Image-to-feature-map stage: patch grid, built-in descriptor, file format.

A feature map is a float array of shape (C, H, W): one C-dimensional
descriptor per cell of an H x W grid laid over the image. The built-in
descriptor replaces a learned backbone; externally computed maps of any
channel depth can be loaded from the ``HSFM`` binary format instead.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BadMagicError,
    DimensionError,
    FormatError,
    InvalidInputError,
    TruncatedError,
    VersionError,
)

__all__ = [
    "DESCRIPTOR_DIM",
    "load_image",
    "save_image",
    "grid_cell_edges",
    "extract_patch_grid",
    "describe_patch",
    "compute_feature_map",
    "save_feature_map",
    "load_feature_map",
]

DESCRIPTOR_DIM = 64

_MAGIC = b"HSFM"
_VERSION = 1
_HEADER = struct.Struct("<4sHIIIB")

# Descriptor layout: 3 x 8 intensity histogram bins, 8 gradient-orientation
# bins, 3 x (mean, std), then block-mean pyramid levels 1x1 and 5x5.
_HIST_BINS = 8
_ORIENT_BINS = 8
_PYRAMID_LEVELS = (1, 5)


def load_image(path) -> np.ndarray:
    """Read an image file as an (H, W, 3) uint8 RGB array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(img: np.ndarray, path) -> None:
    """Write an (H, W, 3) uint8 RGB array as PNG."""
    Image.fromarray(_as_image(img), mode="RGB").save(path, format="PNG")


def _as_image(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise InvalidInputError(
            f"expected (H, W, 3) uint8 image, got shape {arr.shape} dtype {arr.dtype}"
        )
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidInputError("image has zero pixels")
    return arr


def grid_cell_edges(n_pixels: int, n_cells: int) -> np.ndarray:
    """Integer cell boundaries: edge i sits at floor(i * n_pixels / n_cells)."""
    return (np.arange(n_cells + 1) * n_pixels) // n_cells


def extract_patch_grid(img, grid_h: int, grid_w: int) -> list[np.ndarray]:
    """Slice the image into grid_h x grid_w non-overlapping cells, row-major.

    Cells partition the image exactly: cell (i, j) spans pixel rows
    floor(i*H_img/grid_h)..floor((i+1)*H_img/grid_h) and likewise columns.
    """
    arr = _as_image(img)
    h_img, w_img = arr.shape[:2]
    if grid_h < 1 or grid_w < 1:
        raise InvalidInputError("grid dimensions must be >= 1")
    if grid_h > h_img or grid_w > w_img:
        raise InvalidInputError(
            f"grid {grid_h}x{grid_w} larger than image {h_img}x{w_img}"
        )
    rows = grid_cell_edges(h_img, grid_h)
    cols = grid_cell_edges(w_img, grid_w)
    patches = []
    for i in range(grid_h):
        for j in range(grid_w):
            patches.append(arr[rows[i] : rows[i + 1], cols[j] : cols[j + 1]])
    return patches


def _block_means(gray: np.ndarray, k: int) -> np.ndarray:
    """Area-average a 2-D array onto a fixed k x k layout.

    Uses the integer-boundary partition; when an axis is shorter than k the
    cells overlap (each keeps at least one pixel) so the layout stays fixed.
    """
    h, w = gray.shape
    r = (np.arange(k + 1) * h) // k
    c = (np.arange(k + 1) * w) // k
    out = np.empty((k, k), dtype=np.float64)
    for i in range(k):
        r0, r1 = r[i], max(r[i + 1], r[i] + 1)
        for j in range(k):
            c0, c1 = c[j], max(c[j + 1], c[j] + 1)
            out[i, j] = gray[r0:r1, c0:c1].mean()
    return out


def describe_patch(patch) -> np.ndarray:
    """Deterministic 64-dimensional descriptor of one pixel block.

    Concatenates per-channel intensity histograms, a magnitude-weighted
    gradient-orientation histogram, per-channel mean/std, and a grayscale
    block-mean pyramid, then L2-normalizes. Degenerate constant-black
    patches (norm below 1e-12) are returned unnormalized.
    """
    arr = np.asarray(patch)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidInputError("patch must be a non-empty (h, w, 3) block")
    pixels = arr.reshape(-1, 3).astype(np.float64)
    n = pixels.shape[0]

    parts = []
    for ch in range(3):
        hist, _ = np.histogram(pixels[:, ch], bins=_HIST_BINS, range=(0.0, 256.0))
        parts.append(hist.astype(np.float64) / n)

    gray = arr.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    gy = np.gradient(gray, axis=0) if gray.shape[0] > 1 else np.zeros_like(gray)
    gx = np.gradient(gray, axis=1) if gray.shape[1] > 1 else np.zeros_like(gray)
    mag = np.hypot(gx, gy)
    orient = np.arctan2(gy, gx)
    ohist, _ = np.histogram(
        orient, bins=_ORIENT_BINS, range=(-np.pi, np.pi), weights=mag
    )
    total = ohist.sum()
    if total > 0.0:
        ohist = ohist / total
    parts.append(ohist.astype(np.float64))

    mean = pixels.mean(axis=0) / 255.0
    std = pixels.std(axis=0) / 255.0
    parts.append(np.concatenate([mean, std]))

    for k in _PYRAMID_LEVELS:
        parts.append(_block_means(gray, k).ravel() / 255.0)

    desc = np.concatenate(parts)
    norm = np.linalg.norm(desc)
    if norm < 1e-12:
        return desc
    return desc / norm


def compute_feature_map(img, grid_h: int, grid_w: int) -> np.ndarray:
    """Describe every grid cell; returns a (C, grid_h, grid_w) float64 map."""
    patches = extract_patch_grid(img, grid_h, grid_w)
    columns = [describe_patch(p) for p in patches]
    fm = np.stack(columns, axis=1).reshape(DESCRIPTOR_DIM, grid_h, grid_w)
    return fm


def save_feature_map(fm: np.ndarray, path, scalar_width: int = 8) -> None:
    """Write a (C, H, W) map in the HSFM format (little-endian, row-major)."""
    arr = np.asarray(fm)
    if arr.ndim != 3 or 0 in arr.shape:
        raise InvalidInputError(f"expected non-empty (C, H, W) map, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidInputError("feature map contains non-finite values")
    if scalar_width not in (4, 8):
        raise InvalidInputError(f"scalar width must be 4 or 8, got {scalar_width}")
    dtype = np.dtype("<f4") if scalar_width == 4 else np.dtype("<f8")
    c, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, c, h, w, scalar_width))
        f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def load_feature_map(path) -> np.ndarray:
    """Read an HSFM file; returns float32 or float64 per its scalar width."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedError(f"{path}: file shorter than header")
    magic, version, c, h, w, scalar_width = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    if scalar_width not in (4, 8):
        raise FormatError(f"{path}: invalid scalar width {scalar_width}")
    if c == 0 or h == 0 or w == 0:
        raise DimensionError(f"{path}: zero dimension in header ({c}, {h}, {w})")
    expected = c * h * w * scalar_width
    payload = data[_HEADER.size :]
    if len(payload) < expected:
        raise TruncatedError(
            f"{path}: payload holds {len(payload)} bytes, header declares {expected}"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes")
    dtype = np.dtype("<f4") if scalar_width == 4 else np.dtype("<f8")
    fm = np.frombuffer(payload, dtype=dtype).reshape(c, h, w)
    return fm.copy()
