"""Hash-based change decision, localization, upsampling and mask metrics.

A change is declared globally when the normalized Hamming distance of two
global codes strictly exceeds a threshold. Localization compares patch
codes at matching grid positions, upsamples the per-cell distances to the
image resolution with cell-center-aligned bilinear interpolation, and
thresholds at 0.5 into a binary change mask.
"""

from __future__ import annotations

import csv
from collections.abc import Sequence

import numpy as np
from PIL import Image

from .errors import InvalidInputError
from .hash_space import BitCode, normalized_hamming

__all__ = [
    "detect_global",
    "localize",
    "upsample",
    "threshold_heatmap",
    "f1",
    "iou",
    "save_heatmap_png",
    "save_mask_png",
    "load_mask_png",
    "write_metrics_csv",
]


def detect_global(a: BitCode, b: BitCode, threshold: float) -> tuple[bool, float]:
    """(changed, distance): changed iff the normalized distance exceeds the threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise InvalidInputError("threshold must lie in [0, 1]")
    distance = normalized_hamming(a, b)
    return distance > threshold, distance


def localize(
    codes_a: Sequence[BitCode],
    codes_b: Sequence[BitCode],
    grid_h: int,
    grid_w: int,
) -> np.ndarray:
    """Normalized Hamming distance per grid cell; shape (grid_h, grid_w)."""
    if grid_h < 1 or grid_w < 1:
        raise InvalidInputError("grid dimensions must be >= 1")
    if len(codes_a) != grid_h * grid_w or len(codes_b) != grid_h * grid_w:
        raise InvalidInputError(
            f"expected {grid_h * grid_w} codes per side, got {len(codes_a)} and {len(codes_b)}"
        )
    grid = np.empty((grid_h, grid_w))
    for i in range(grid_h):
        for j in range(grid_w):
            p = i * grid_w + j
            grid[i, j] = normalized_hamming(codes_a[p], codes_b[p])
    return grid


def upsample(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear upsampling with grid values anchored at cell centers.

    Cell (i, j) sits at pixel center ((i+0.5) * out_h / H, (j+0.5) * out_w / W);
    pixels beyond the outermost centers clamp to the edge value, so the
    output range never exceeds the grid's own min/max.
    """
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2 or 0 in g.shape:
        raise InvalidInputError("grid must be a non-empty 2-D array")
    h, w = g.shape
    if out_h < h or out_w < w:
        raise InvalidInputError(
            f"target {out_h}x{out_w} smaller than grid {h}x{w}"
        )
    # Fractional grid coordinates of each output pixel center.
    gy = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    gx = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    gy = np.clip(gy, 0.0, h - 1.0)
    gx = np.clip(gx, 0.0, w - 1.0)
    y0 = np.floor(gy).astype(int)
    x0 = np.floor(gx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (gy - y0)[:, np.newaxis]
    wx = (gx - x0)[np.newaxis, :]
    top = g[y0][:, x0] * (1 - wx) + g[y0][:, x1] * wx
    bottom = g[y1][:, x0] * (1 - wx) + g[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def threshold_heatmap(heatmap: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Boolean mask: a pixel is changed iff its score strictly exceeds the threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise InvalidInputError("threshold must lie in [0, 1]")
    hm = np.asarray(heatmap, dtype=np.float64)
    return hm > threshold


def _as_mask_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    if p.shape != g.shape:
        raise InvalidInputError(f"mask shapes differ: {p.shape} vs {g.shape}")
    return p, g


def f1(pred, gt) -> float:
    """F1 overlap of binary masks; 1.0 when both masks are entirely negative."""
    p, g = _as_mask_pair(pred, gt)
    tp = int(np.logical_and(p, g).sum())
    fp = int(np.logical_and(p, ~g).sum())
    fn = int(np.logical_and(~p, g).sum())
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def iou(pred, gt) -> float:
    """Intersection over union of binary masks; 1.0 when both are empty."""
    p, g = _as_mask_pair(pred, gt)
    tp = int(np.logical_and(p, g).sum())
    fp = int(np.logical_and(p, ~g).sum())
    fn = int(np.logical_and(~p, g).sum())
    if tp + fp + fn == 0:
        return 1.0
    return tp / (tp + fp + fn)


def save_heatmap_png(heatmap: np.ndarray, path) -> None:
    """Write scores in [0, 1] as 8-bit grayscale: value = round(255 * score)."""
    hm = np.asarray(heatmap, dtype=np.float64)
    if hm.ndim != 2 or hm.min() < 0.0 or hm.max() > 1.0:
        raise InvalidInputError("heatmap must be 2-D with values in [0, 1]")
    Image.fromarray(np.rint(hm * 255.0).astype(np.uint8), mode="L").save(path, format="PNG")


def save_mask_png(mask: np.ndarray, path) -> None:
    """Write a boolean mask as a 0/255 grayscale PNG."""
    m = np.asarray(mask, dtype=bool)
    Image.fromarray(np.where(m, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def load_mask_png(path) -> np.ndarray:
    """Read a mask PNG; any value above 127 counts as changed."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def write_metrics_csv(path, rows, aggregate: bool = True) -> None:
    """Write per-pair (pair_id, changed, distance, f1, iou) rows plus a mean row."""
    rows = list(rows)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pair_id", "changed", "global_distance", "f1", "iou"])
        for pair_id, changed, distance, f1_val, iou_val in rows:
            writer.writerow([pair_id, int(changed), f"{distance:.6f}",
                             f"{f1_val:.6f}", f"{iou_val:.6f}"])
        if aggregate and rows:
            mean_f1 = sum(r[3] for r in rows) / len(rows)
            mean_iou = sum(r[4] for r in rows) / len(rows)
            mean_d = sum(r[2] for r in rows) / len(rows)
            writer.writerow(["mean", "", f"{mean_d:.6f}", f"{mean_f1:.6f}", f"{mean_iou:.6f}"])
