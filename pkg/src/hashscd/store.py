"""Durable, bit-exact storage of hash records for long-term monitoring.

One store file holds observations of a single geometry (hash length l,
grid H x W). Each record carries a location id, a UTC timestamp, the
global code and the P patch codes: (P+1) * l bits of code payload plus a
small metadata frame. The format is an append-only log with an in-memory
(location, timestamp) index rebuilt on open, so a file truncated at any
record boundary reopens cleanly with every fully written record intact.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ConflictError,
    DimensionError,
    FormatError,
    InvalidInputError,
    NotFoundError,
    TruncatedError,
    VersionError,
)
from .hash_space import BitCode

__all__ = ["HashRecord", "Store", "create_store", "open_store"]

_MAGIC = b"HSDB"
_VERSION = 1
_HEADER = struct.Struct("<4sHHHHQ")
_TIMESTAMP = struct.Struct("<q")


@dataclass(frozen=True)
class HashRecord:
    """One stored observation: global + patch codes keyed by (location, time)."""

    location_id: str
    timestamp: int
    global_code: BitCode
    patch_codes: list[BitCode]
    grid_h: int
    grid_w: int

    def __post_init__(self):
        encoded = self.location_id.encode("utf-8")
        if not 1 <= len(encoded) <= 255:
            raise InvalidInputError("location_id must encode to 1..255 UTF-8 bytes")
        if not -(2**63) <= self.timestamp < 2**63:
            raise InvalidInputError("timestamp outside signed 64-bit range")
        if self.grid_h < 1 or self.grid_w < 1:
            raise InvalidInputError("grid dimensions must be >= 1")
        if len(self.patch_codes) != self.grid_h * self.grid_w:
            raise InvalidInputError(
                f"expected {self.grid_h * self.grid_w} patch codes, got {len(self.patch_codes)}"
            )
        nbits = self.global_code.nbits
        if any(c.nbits != nbits for c in self.patch_codes):
            raise InvalidInputError("all codes in a record must share the hash length")

    @property
    def hash_bits(self) -> int:
        return self.global_code.nbits

    @property
    def payload_bits(self) -> int:
        """Code payload size: (P+1) * l bits."""
        return (len(self.patch_codes) + 1) * self.hash_bits


def _record_size(loc_bytes: int, hash_bits: int, n_patches: int) -> int:
    code_bytes = (hash_bits + 7) // 8
    return 1 + loc_bytes + 8 + code_bytes * (n_patches + 1)


class Store:
    """Handle over one store file; use ``create_store``/``open_store``."""

    def __init__(self, path, hash_bits: int, grid_h: int, grid_w: int, _file, _index):
        self.path = os.fspath(path)
        self.hash_bits = hash_bits
        self.grid_h = grid_h
        self.grid_w = grid_w
        self._file = _file
        self._index: dict[tuple[str, int], int] = _index  # key -> file offset
        self._order: list[tuple[str, int]] = list(_index)

    # -- lifecycle ---------------------------------------------------------

    def close(self) -> None:
        if self._file is not None:
            self.flush()
            self._file.close()
            self._file = None

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def flush(self) -> None:
        """Persist buffered records and the record count."""
        self._file.seek(0)
        self._file.write(
            _HEADER.pack(_MAGIC, _VERSION, self.hash_bits, self.grid_h, self.grid_w,
                         len(self._index))
        )
        self._file.flush()
        os.fsync(self._file.fileno())

    # -- operations ---------------------------------------------------------

    @property
    def count(self) -> int:
        return len(self._index)

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    def put(self, record: HashRecord) -> None:
        """Append one record; duplicate (location, timestamp) keys conflict."""
        if record.hash_bits != self.hash_bits:
            raise InvalidInputError(
                f"record hash length {record.hash_bits} != store {self.hash_bits}"
            )
        if (record.grid_h, record.grid_w) != (self.grid_h, self.grid_w):
            raise InvalidInputError(
                f"record grid {record.grid_h}x{record.grid_w} != store {self.grid_h}x{self.grid_w}"
            )
        key = (record.location_id, record.timestamp)
        if key in self._index:
            raise ConflictError(f"record already stored for {key}")
        loc = record.location_id.encode("utf-8")
        frame = bytearray()
        frame.append(len(loc))
        frame += loc
        frame += _TIMESTAMP.pack(record.timestamp)
        frame += record.global_code.packed.tobytes()
        for code in record.patch_codes:
            frame += code.packed.tobytes()
        self._file.seek(0, os.SEEK_END)
        offset = self._file.tell()
        self._file.write(frame)
        self._index[key] = offset
        self._order.append(key)

    def get(self, location_id: str, timestamp: int) -> HashRecord:
        """Exact-key lookup."""
        key = (location_id, timestamp)
        offset = self._index.get(key)
        if offset is None:
            raise NotFoundError(f"no record for {key}")
        return self._read_at(offset)

    def latest(self, location_id: str) -> HashRecord:
        """The record with the greatest timestamp at a location."""
        stamps = [t for (loc, t) in self._index if loc == location_id]
        if not stamps:
            raise NotFoundError(f"no records for location {location_id!r}")
        return self.get(location_id, max(stamps))

    def scan(self):
        """Yield all records in insertion order."""
        for key in self._order:
            yield self._read_at(self._index[key])

    def _read_at(self, offset: int) -> HashRecord:
        self._file.seek(offset)
        code_bytes = (self.hash_bits + 7) // 8
        loc_len = self._file.read(1)[0]
        data = self._file.read(loc_len + 8 + code_bytes * (self.n_patches + 1))
        loc = data[:loc_len].decode("utf-8")
        (timestamp,) = _TIMESTAMP.unpack_from(data, loc_len)
        pos = loc_len + 8
        global_code = BitCode(data[pos : pos + code_bytes], self.hash_bits)
        pos += code_bytes
        patches = []
        for _ in range(self.n_patches):
            patches.append(BitCode(data[pos : pos + code_bytes], self.hash_bits))
            pos += code_bytes
        return HashRecord(loc, timestamp, global_code, patches, self.grid_h, self.grid_w)


def create_store(path, hash_bits: int, grid_h: int, grid_w: int) -> Store:
    """Create an empty store with the given geometry."""
    if not 1 <= hash_bits <= 0xFFFF:
        raise InvalidInputError("hash_bits must fit in 16 bits and be >= 1")
    if not (1 <= grid_h <= 0xFFFF and 1 <= grid_w <= 0xFFFF):
        raise InvalidInputError("grid dimensions must fit in 16 bits and be >= 1")
    f = open(path, "w+b")
    f.write(_HEADER.pack(_MAGIC, _VERSION, hash_bits, grid_h, grid_w, 0))
    f.flush()
    return Store(path, hash_bits, grid_h, grid_w, f, {})


def open_store(path) -> Store:
    """Open an existing store, rebuilding the key index by a full scan.

    The header's record count is advisory; the scan is the truth, so a file
    truncated at a record boundary opens with the surviving records. A
    partial trailing record raises TruncatedError.
    """
    f = open(path, "r+b")
    try:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise TruncatedError(f"{path}: file shorter than header")
        magic, version, hash_bits, grid_h, grid_w, _count = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        if version != _VERSION:
            raise VersionError(f"{path}: unsupported version {version}")
        if hash_bits == 0 or grid_h == 0 or grid_w == 0:
            raise DimensionError(f"{path}: zero geometry in header")
        file_size = os.fstat(f.fileno()).st_size
        code_bytes = (hash_bits + 7) // 8
        n_patches = grid_h * grid_w
        index: dict[tuple[str, int], int] = {}
        offset = _HEADER.size
        while offset < file_size:
            f.seek(offset)
            first = f.read(1)
            loc_len = first[0]
            if loc_len == 0:
                raise FormatError(f"{path}: zero-length location at offset {offset}")
            size = _record_size(loc_len, hash_bits, n_patches)
            if offset + size > file_size:
                raise TruncatedError(
                    f"{path}: partial record at offset {offset}"
                )
            body = f.read(loc_len + 8)
            loc = body[:loc_len].decode("utf-8")
            (timestamp,) = _TIMESTAMP.unpack_from(body, loc_len)
            key = (loc, timestamp)
            if key in index:
                raise FormatError(f"{path}: duplicate key {key} in log")
            index[key] = offset
            offset += size
        return Store(path, hash_bits, grid_h, grid_w, f, index)
    except Exception:
        f.close()
        raise
