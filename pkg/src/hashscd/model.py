"""The hash head: a learnable projection from patch features to hash codes.

The forward pass projects each patch feature with a bias-free matrix,
relaxes to (-1, 1) with tanh during training, and hardens to packed bits at
inference. Patch codes are combined into one global code of the same
length: absolute-difference fold on relaxed codes, cascaded XOR on bits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hash_space
from .errors import (
    BadMagicError,
    DimensionError,
    InvalidInputError,
    TruncatedError,
    VersionError,
)
from .hash_space import BitCode

__all__ = [
    "ModelParams",
    "SoftImageHashes",
    "ImageHashes",
    "init_params",
    "forward_patch",
    "forward_image",
    "hash_image",
    "save_params",
    "load_params",
]

_MAGIC = b"HSPW"
_VERSION = 1
_HEADER = struct.Struct("<4sHII")


@dataclass(frozen=True)
class ModelParams:
    """Projection weights of shape (hash_bits, feature_dim)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or 0 in w.shape:
            raise InvalidInputError(f"weights must be a non-empty matrix, got {w.shape}")
        if not np.isfinite(w).all():
            raise InvalidInputError("weights contain non-finite entries")
        object.__setattr__(self, "weights", w)

    @property
    def hash_bits(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class SoftImageHashes:
    """Training-time hashes: relaxed patch codes plus their aggregate."""

    patch_soft: np.ndarray  # (P, l) unit-interval codes, row-major patches
    global_soft: np.ndarray  # (l,) unit-interval aggregate
    grid_h: int
    grid_w: int


@dataclass(frozen=True)
class ImageHashes:
    """Inference-time hashes: packed patch codes plus their XOR aggregate."""

    patch_codes: list[BitCode]  # row-major patches
    global_code: BitCode
    grid_h: int
    grid_w: int


def init_params(hash_bits: int, feature_dim: int, seed: int) -> ModelParams:
    """Uniform init in [-a, a] with a = sqrt(6 / (feature_dim + hash_bits))."""
    if hash_bits < 1 or feature_dim < 1:
        raise InvalidInputError("hash_bits and feature_dim must be >= 1")
    bound = np.sqrt(6.0 / (feature_dim + hash_bits))
    rng = np.random.default_rng(seed)
    w = rng.uniform(-bound, bound, size=(hash_bits, feature_dim))
    return ModelParams(w)


def forward_patch(params: ModelParams, feature: np.ndarray):
    """One patch through the head: returns (preactivation, tanh code, unit code)."""
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (params.feature_dim,):
        raise InvalidInputError(
            f"feature has shape {f.shape}, head expects ({params.feature_dim},)"
        )
    v = params.weights @ f
    u = np.tanh(v)
    h = (u + 1.0) / 2.0
    return v, u, h


def _project_map(params: ModelParams, feature_map: np.ndarray) -> np.ndarray:
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim != 3:
        raise InvalidInputError(f"feature map must be (C, H, W), got {fm.shape}")
    if fm.shape[0] != params.feature_dim:
        raise InvalidInputError(
            f"feature map has {fm.shape[0]} channels, head expects {params.feature_dim}"
        )
    flat = fm.reshape(fm.shape[0], -1)  # (C, P) row-major patches
    return params.weights @ flat  # (l, P)


def forward_image(params: ModelParams, feature_map: np.ndarray) -> SoftImageHashes:
    """Relaxed codes for every patch plus their absolute-difference aggregate."""
    v = _project_map(params, feature_map)
    h = (np.tanh(v) + 1.0) / 2.0
    patch_soft = h.T.copy()  # (P, l)
    global_soft = hash_space.soft_aggregate(patch_soft)
    _, grid_h, grid_w = np.asarray(feature_map).shape
    return SoftImageHashes(patch_soft, global_soft, grid_h, grid_w)


def hash_image(params: ModelParams, feature_map: np.ndarray) -> ImageHashes:
    """Hard codes: binarize each patch first, then XOR-aggregate the bits."""
    v = _project_map(params, feature_map)
    bits = (v >= 0.0).astype(np.uint8)  # sign of tanh(v) equals sign of v
    patch_codes = [
        BitCode(np.packbits(bits[:, p]), params.hash_bits)
        for p in range(bits.shape[1])
    ]
    global_code = hash_space.binary_aggregate(patch_codes)
    _, grid_h, grid_w = np.asarray(feature_map).shape
    return ImageHashes(patch_codes, global_code, grid_h, grid_w)


def save_params(params: ModelParams, path) -> None:
    """Write weights in the HSPW format (little-endian float64, row-major)."""
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, params.hash_bits, params.feature_dim))
        f.write(np.ascontiguousarray(params.weights, dtype="<f8").tobytes())


def load_params(path, expect_bits: int | None = None, expect_dim: int | None = None) -> ModelParams:
    """Read an HSPW file; optional expected dims are enforced."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedError(f"{path}: file shorter than header")
    magic, version, hash_bits, feature_dim = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    if hash_bits == 0 or feature_dim == 0:
        raise DimensionError(f"{path}: zero dimension in header")
    if expect_bits is not None and hash_bits != expect_bits:
        raise DimensionError(f"{path}: hash length {hash_bits}, expected {expect_bits}")
    if expect_dim is not None and feature_dim != expect_dim:
        raise DimensionError(f"{path}: feature dim {feature_dim}, expected {expect_dim}")
    expected = hash_bits * feature_dim * 8
    payload = data[_HEADER.size :]
    if len(payload) != expected:
        raise TruncatedError(
            f"{path}: payload holds {len(payload)} bytes, header declares {expected}"
        )
    w = np.frombuffer(payload, dtype="<f8").reshape(hash_bits, feature_dim)
    return ModelParams(w.copy())
