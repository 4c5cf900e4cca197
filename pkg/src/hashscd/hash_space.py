"""Bit-level primitives: binary codes, relaxed codes, aggregation, Hamming distance.

Binary codes are packed MSB-first into bytes (bit index 0 is the most
significant bit of byte 0); the packed layout is canonical both in memory
and on disk. Relaxed codes are plain float arrays: symmetric codes live in
(-1, 1), unit codes in [0, 1].
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "BitCode",
    "binarize",
    "phi",
    "to_symmetric",
    "soft_aggregate",
    "binary_aggregate",
    "xor_aggregate_packed",
    "hamming",
    "normalized_hamming",
    "bulk_hamming",
    "pack_code_matrix",
    "MIN_BITS",
    "MAX_BITS",
]

# Supported envelope is 8..4096 with 16/32/64 first-class; shorter codes are
# accepted so toy problems and per-bit tests stay expressible.
MIN_BITS = 1
MAX_BITS = 4096


def _packed_size(nbits: int) -> int:
    return (nbits + 7) // 8


def _tail_mask(nbits: int) -> int:
    """Mask of valid bits in the final byte (MSB-first packing)."""
    used = nbits % 8
    return 0xFF if used == 0 else (0xFF << (8 - used)) & 0xFF


class BitCode:
    """An immutable hash code of ``nbits`` binary digits, stored packed.

    Pad bits in the final byte are forced to zero so packed buffers can be
    XOR-ed, compared and written to disk verbatim.
    """

    __slots__ = ("packed", "nbits")

    packed: np.ndarray
    nbits: int

    def __init__(self, packed: bytes | bytearray | np.ndarray, nbits: int):
        if not MIN_BITS <= nbits <= MAX_BITS:
            raise InvalidInputError(
                f"hash length {nbits} outside supported range [{MIN_BITS}, {MAX_BITS}]"
            )
        buf = np.frombuffer(bytes(packed), dtype=np.uint8).copy()
        if buf.size != _packed_size(nbits):
            raise InvalidInputError(
                f"packed buffer holds {buf.size} bytes, expected {_packed_size(nbits)} for {nbits} bits"
            )
        buf[-1] &= _tail_mask(nbits)
        buf.setflags(write=False)
        object.__setattr__(self, "packed", buf)
        object.__setattr__(self, "nbits", nbits)

    def __setattr__(self, name, value):
        raise AttributeError("BitCode is immutable")

    @classmethod
    def from_bits(cls, bits: Sequence[int] | np.ndarray) -> "BitCode":
        """Build a code from an ordered sequence of 0/1 digits."""
        arr = np.asarray(bits)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidInputError("bits must be a non-empty 1-D sequence")
        if not np.isin(arr, (0, 1)).all():
            raise InvalidInputError("bits must contain only 0 and 1")
        packed = np.packbits(arr.astype(np.uint8))
        return cls(packed, int(arr.size))

    def bits(self) -> np.ndarray:
        """Unpacked 0/1 digits as a uint8 array of length ``nbits``."""
        return np.unpackbits(self.packed)[: self.nbits]

    def __len__(self) -> int:
        return self.nbits

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitCode):
            return NotImplemented
        return self.nbits == other.nbits and np.array_equal(self.packed, other.packed)

    def __hash__(self) -> int:
        return hash((self.nbits, self.packed.tobytes()))

    def __xor__(self, other: "BitCode") -> "BitCode":
        if not isinstance(other, BitCode):
            return NotImplemented
        if other.nbits != self.nbits:
            raise InvalidInputError(
                f"length mismatch: {self.nbits} vs {other.nbits}"
            )
        return BitCode(np.bitwise_xor(self.packed, other.packed), self.nbits)

    def __invert__(self) -> "BitCode":
        return BitCode(np.bitwise_not(self.packed), self.nbits)

    def __repr__(self) -> str:
        return f"BitCode({self.nbits}, {self.packed.tobytes().hex()})"


def _as_float_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-D vector")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} contains non-finite components")
    return arr


def binarize(u) -> BitCode:
    """Harden a symmetric relaxed code: bit 1 where the component is >= 0.

    Zero maps to bit 1 (the sign convention treats -1 as bit 0 and +1,
    including the boundary, as bit 1).
    """
    arr = _as_float_vector(u, "code")
    return BitCode.from_bits((arr >= 0.0).astype(np.uint8))


def phi(v) -> np.ndarray:
    """Map preactivations into the unit interval: (tanh(v) + 1) / 2."""
    arr = np.asarray(v, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise InvalidInputError("preactivation contains non-finite components")
    return (np.tanh(arr) + 1.0) / 2.0


def to_symmetric(r) -> np.ndarray:
    """Map a unit-interval code back to the symmetric range: 2r - 1."""
    return 2.0 * np.asarray(r, dtype=np.float64) - 1.0


def soft_aggregate(codes) -> np.ndarray:
    """Fold unit-interval codes with the sequential absolute difference.

    ``codes`` is a sequence of equal-length vectors, or an array whose first
    axis enumerates them; extra trailing axes are carried through unchanged,
    so a (P, T, l) stack folds to (T, l). The fold starts at the first code
    and applies ``acc = |code - acc|`` in order. A single code is returned
    unchanged. On exactly binary inputs this equals the cascaded XOR of the
    corresponding bits.
    """
    if isinstance(codes, np.ndarray):
        stack = codes.astype(np.float64, copy=False)
    else:
        seq = list(codes)
        if not seq:
            raise InvalidInputError("cannot aggregate an empty list of codes")
        lengths = {np.asarray(c).shape for c in seq}
        if len(lengths) != 1:
            raise InvalidInputError(f"mixed code shapes: {sorted(lengths)}")
        stack = np.asarray(seq, dtype=np.float64)
    if stack.ndim < 2 or stack.shape[0] == 0 or stack.shape[-1] == 0:
        raise InvalidInputError("expected a non-empty stack of non-empty codes")
    if not np.isfinite(stack).all():
        raise InvalidInputError("codes contain non-finite components")
    if stack.min() < 0.0 or stack.max() > 1.0:
        raise InvalidInputError("unit codes must lie in [0, 1]")
    acc = stack[0].copy()
    for k in range(1, stack.shape[0]):
        np.abs(stack[k] - acc, out=acc)
    return acc


def xor_aggregate_packed(packed: np.ndarray) -> np.ndarray:
    """XOR-reduce packed code buffers over the first axis."""
    arr = np.asarray(packed, dtype=np.uint8)
    if arr.ndim < 2 or arr.shape[0] == 0:
        raise InvalidInputError("expected a non-empty stack of packed codes")
    return np.bitwise_xor.reduce(arr, axis=0)


def binary_aggregate(codes: Sequence[BitCode]) -> BitCode:
    """Combine codes by componentwise XOR; the input order is irrelevant."""
    seq = list(codes)
    if not seq:
        raise InvalidInputError("cannot aggregate an empty list of codes")
    nbits = seq[0].nbits
    if any(c.nbits != nbits for c in seq):
        raise InvalidInputError("codes must share one hash length")
    stacked = np.stack([c.packed for c in seq])
    return BitCode(xor_aggregate_packed(stacked), nbits)


def hamming(a: BitCode, b: BitCode) -> int:
    """Number of differing bit positions, via popcount over XOR-ed bytes."""
    if a.nbits != b.nbits:
        raise InvalidInputError(f"length mismatch: {a.nbits} vs {b.nbits}")
    return int(np.bitwise_count(np.bitwise_xor(a.packed, b.packed)).sum())


def normalized_hamming(a: BitCode, b: BitCode) -> float:
    """Hamming distance divided by the hash length; in [0, 1]."""
    return hamming(a, b) / a.nbits


def pack_code_matrix(codes: Sequence[BitCode]) -> np.ndarray:
    """Stack packed buffers of equal-length codes into an (n, nbytes) matrix."""
    seq = list(codes)
    if not seq:
        raise InvalidInputError("empty code list")
    nbits = seq[0].nbits
    if any(c.nbits != nbits for c in seq):
        raise InvalidInputError("codes must share one hash length")
    return np.stack([c.packed for c in seq])


def bulk_hamming(query: BitCode, packed_matrix: np.ndarray) -> np.ndarray:
    """Hamming distance from ``query`` to every row of a packed code matrix."""
    matrix = np.asarray(packed_matrix, dtype=np.uint8)
    if matrix.ndim != 2 or matrix.shape[1] != query.packed.size:
        raise InvalidInputError("packed matrix does not match query width")
    xored = np.bitwise_xor(matrix, query.packed[np.newaxis, :])
    return np.bitwise_count(xored).sum(axis=1, dtype=np.int64)
