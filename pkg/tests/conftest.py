"""Shared helpers: independent oracles and random data builders."""

from __future__ import annotations

import numpy as np
import pytest

from hashscd.hash_space import BitCode


def hamming_bitloop(a: BitCode, b: BitCode) -> int:
    """Naive per-bit comparison; the oracle for the popcount kernel."""
    assert a.nbits == b.nbits
    bits_a = a.bits()
    bits_b = b.bits()
    count = 0
    for i in range(a.nbits):
        if bits_a[i] != bits_b[i]:
            count += 1
    return count


def average_precision_bruteforce(ranked_ids, relevant) -> float:
    """Recompute AP from scratch: precision-at-r by explicit recount."""
    relevant = set(relevant)
    total = 0.0
    for r, candidate in enumerate(ranked_ids, start=1):
        if candidate in relevant:
            top_r = ranked_ids[:r]
            hits = sum(1 for c in top_r if c in relevant)
            total += hits / r
    return total / len(relevant)


def random_code(rng: np.random.Generator, nbits: int) -> BitCode:
    return BitCode.from_bits(rng.integers(0, 2, size=nbits))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


@pytest.fixture
def random_image(rng) -> np.ndarray:
    return rng.integers(0, 256, size=(48, 40, 3), dtype=np.uint8)
