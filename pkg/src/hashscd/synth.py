"""Synthetic desk-scale datasets with exact ground truth.

Change pairs are a textured base image plus a copy with rectangles
overwritten (solid recolor or a swapped texture); the mask is the exact
union of the rectangles, and with zero photometric nuisance the two images
are byte-identical outside them. Cluster sets give each cluster its own
palette and texture with seeded per-item jitter, for retrieval tests.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "ChangeRect",
    "SynthChangeSpec",
    "SynthClusterSpec",
    "gen_pair",
    "gen_clusters",
    "write_pair_manifest",
]

_FILL_STYLES = ("solid", "texture")


@dataclass(frozen=True)
class ChangeRect:
    """A rectangle to overwrite in the second image, in pixel units."""

    top: int
    left: int
    height: int
    width: int
    fill: str = "solid"

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidInputError("rectangle must be at least 1x1")
        if self.top < 0 or self.left < 0:
            raise InvalidInputError("rectangle origin must be non-negative")
        if self.fill not in _FILL_STYLES:
            raise InvalidInputError(f"fill must be one of {_FILL_STYLES}")


@dataclass(frozen=True)
class SynthChangeSpec:
    """Geometry, change rectangles and nuisance level for one image pair."""

    height: int
    width: int
    rects: tuple[ChangeRect, ...] = ()
    nuisance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidInputError("image dimensions must be >= 1")
        if not 0.0 <= self.nuisance <= 1.0:
            raise InvalidInputError("nuisance level must lie in [0, 1]")
        for r in self.rects:
            if r.top + r.height > self.height or r.left + r.width > self.width:
                raise InvalidInputError(f"rectangle {r} exceeds image bounds")


@dataclass(frozen=True)
class SynthClusterSpec:
    """Cluster count, items per cluster, separation and jitter levels."""

    clusters: int
    items_per_cluster: int
    separation: float = 1.0
    jitter: float = 0.0
    seed: int = 0
    height: int = 64
    width: int = 64

    def __post_init__(self):
        if self.clusters < 2:
            raise InvalidInputError("retrieval tests need at least 2 clusters")
        if self.items_per_cluster < 1:
            raise InvalidInputError("items_per_cluster must be >= 1")
        if not 0.0 <= self.separation <= 1.0:
            raise InvalidInputError("separation must lie in [0, 1]")
        if not 0.0 <= self.jitter <= 1.0:
            raise InvalidInputError("jitter must lie in [0, 1]")
        if self.height < 1 or self.width < 1:
            raise InvalidInputError("image dimensions must be >= 1")


def _texture(rng: np.random.Generator, height: int, width: int,
             palette: np.ndarray, coarse: int = 8) -> np.ndarray:
    """Smooth random RGB texture: low-res palette-tinted noise, upsampled."""
    ch = min(coarse, height)
    cw = min(coarse, width)
    low = rng.uniform(0.0, 1.0, size=(ch, cw, 3))
    low = 0.35 * 255.0 * low + 0.65 * palette[np.newaxis, np.newaxis, :]
    # Bilinear upsampling of the coarse lattice, aligned to cell centers.
    gy = np.clip((np.arange(height) + 0.5) * ch / height - 0.5, 0, ch - 1)
    gx = np.clip((np.arange(width) + 0.5) * cw / width - 0.5, 0, cw - 1)
    y0 = np.floor(gy).astype(int)
    x0 = np.floor(gx).astype(int)
    y1 = np.minimum(y0 + 1, ch - 1)
    x1 = np.minimum(x0 + 1, cw - 1)
    wy = (gy - y0)[:, np.newaxis, np.newaxis]
    wx = (gx - x0)[np.newaxis, :, np.newaxis]
    top = low[y0][:, x0] * (1 - wx) + low[y0][:, x1] * wx
    bottom = low[y1][:, x0] * (1 - wx) + low[y1][:, x1] * wx
    img = top * (1 - wy) + bottom * wy
    grain = rng.uniform(-12.0, 12.0, size=img.shape)
    return np.clip(np.rint(img + grain), 0, 255).astype(np.uint8)


def gen_pair(spec: SynthChangeSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(img_t0, img_t1, mask): t1 overwrites the rectangles, mask is their union."""
    rng = np.random.default_rng(spec.seed)
    palette = rng.uniform(40.0, 215.0, size=3)
    t0 = _texture(rng, spec.height, spec.width, palette)
    t1 = t0.copy()
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    for rect in spec.rects:
        ys = slice(rect.top, rect.top + rect.height)
        xs = slice(rect.left, rect.left + rect.width)
        if rect.fill == "solid":
            # Complementary color: maximally far from the base palette.
            color = np.clip(np.rint(255.0 - palette), 0, 255).astype(np.uint8)
            t1[ys, xs] = color
        else:
            swapped = _texture(rng, rect.height, rect.width,
                               np.clip(255.0 - palette, 0.0, 255.0))
            t1[ys, xs] = swapped
        mask[ys, xs] = True
    if spec.nuisance > 0.0:
        shift = rng.uniform(-30.0, 30.0, size=3) * spec.nuisance
        noise = rng.normal(0.0, 20.0 * spec.nuisance, size=t1.shape)
        t1 = np.clip(np.rint(t1.astype(np.float64) + shift + noise), 0, 255).astype(np.uint8)
    return t0, t1, mask


def gen_clusters(spec: SynthClusterSpec) -> list[tuple[int, np.ndarray]]:
    """Labeled images: ``items_per_cluster`` jittered variants per cluster."""
    rng = np.random.default_rng(spec.seed)
    # Palettes sit on a color circle; separation scales their spread.
    angles = 2.0 * np.pi * np.arange(spec.clusters) / spec.clusters
    base = np.stack([
        127.5 + 110.0 * spec.separation * np.cos(angles),
        127.5 + 110.0 * spec.separation * np.sin(angles),
        127.5 + 110.0 * spec.separation * np.cos(angles + 2.0),
    ], axis=1)
    images: list[tuple[int, np.ndarray]] = []
    for label in range(spec.clusters):
        palette = np.clip(base[label], 0.0, 255.0)
        proto_rng = np.random.default_rng([spec.seed, 1000 + label])
        proto = _texture(proto_rng, spec.height, spec.width, palette)
        for item in range(spec.items_per_cluster):
            if spec.jitter == 0.0:
                images.append((label, proto.copy()))
                continue
            item_rng = np.random.default_rng([spec.seed, 1000 + label, item])
            shift = item_rng.uniform(-40.0, 40.0, size=3) * spec.jitter
            noise = item_rng.normal(0.0, 25.0 * spec.jitter, size=proto.shape)
            img = np.clip(np.rint(proto.astype(np.float64) + shift + noise),
                          0, 255).astype(np.uint8)
            images.append((label, img))
    return images


def write_pair_manifest(path, entries) -> None:
    """CSV manifest: one row per generated pair with its rectangles and seed."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pair_id", "seed", "nuisance", "rects"])
        for pair_id, spec in entries:
            rect_text = ";".join(
                f"{r.top},{r.left},{r.height},{r.width},{r.fill}" for r in spec.rects
            )
            writer.writerow([pair_id, spec.seed, spec.nuisance, rect_text])
