import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hashscd.errors import InvalidInputError
from hashscd.hash_space import (
    BitCode,
    binarize,
    binary_aggregate,
    bulk_hamming,
    hamming,
    normalized_hamming,
    pack_code_matrix,
    phi,
    soft_aggregate,
    to_symmetric,
    xor_aggregate_packed,
)

from .conftest import hamming_bitloop, random_code


class TestBitCode:
    def test_roundtrip_bits(self, rng):
        bits = rng.integers(0, 2, size=37)
        code = BitCode.from_bits(bits)
        assert code.nbits == 37
        assert np.array_equal(code.bits(), bits)

    def test_pad_bits_forced_zero(self):
        # 12 bits -> 2 bytes; the low 4 bits of byte 1 are padding.
        code = BitCode(b"\xff\xff", 12)
        assert code.packed[1] == 0xF0

    def test_packing_msb_first(self):
        code = BitCode.from_bits([1, 0, 1, 0, 0, 0, 0, 0])
        assert code.packed.tobytes() == b"\xa0"

    def test_equality_and_hash(self):
        a = BitCode.from_bits([1, 0, 1])
        b = BitCode.from_bits([1, 0, 1])
        assert a == b and hash(a) == hash(b)
        assert a != BitCode.from_bits([1, 0, 0])

    def test_immutable(self):
        code = BitCode.from_bits([1, 0])
        with pytest.raises(AttributeError):
            code.nbits = 5
        with pytest.raises(ValueError):
            code.packed[0] = 0

    def test_length_bounds(self):
        with pytest.raises(InvalidInputError):
            BitCode(b"", 0)
        with pytest.raises(InvalidInputError):
            BitCode(bytes(513), 4097)

    def test_wrong_buffer_size(self):
        with pytest.raises(InvalidInputError):
            BitCode(b"\x00", 16)

    def test_non_binary_bits_rejected(self):
        with pytest.raises(InvalidInputError):
            BitCode.from_bits([0, 2, 1])


class TestBinarize:
    def test_spec_example(self):
        assert np.array_equal(binarize([0.7, -0.2, 0.0, -0.9]).bits(), [1, 0, 1, 0])

    def test_all_zeros_maps_to_ones(self):
        assert np.array_equal(binarize(np.zeros(16)).bits(), np.ones(16))

    def test_strictly_negative(self):
        assert np.array_equal(binarize([-0.1, -0.1]).bits(), [0, 0])

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidInputError):
            binarize([0.5, float("nan")])
        with pytest.raises(InvalidInputError):
            binarize([float("inf"), 0.0])


class TestPhi:
    def test_zero_maps_to_half(self):
        assert phi(np.zeros(4)).tolist() == [0.5] * 4

    def test_saturation(self):
        out = phi(np.array([50.0, -50.0]))
        assert out[0] == pytest.approx(1.0, abs=1e-12)
        assert out[1] == pytest.approx(0.0, abs=1e-12)
        moderate = phi(np.array([8.0, -8.0]))
        assert 0.0 < moderate[1] and moderate[0] < 1.0

    def test_scalar_value(self):
        # Oracle: direct evaluation of (tanh(1) + 1) / 2 in float64.
        expected = (math.tanh(1.0) + 1.0) / 2.0
        assert expected == 0.8807970779778824
        assert phi([1.0])[0] == expected

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidInputError):
            phi([float("nan")])


class TestToSymmetric:
    def test_endpoints_and_midpoint(self):
        out = to_symmetric([0.0, 0.5, 1.0])
        assert out.tolist() == [-1.0, 0.0, 1.0]

    def test_quarters(self):
        assert to_symmetric([0.25, 0.75]).tolist() == [-0.5, 0.5]


class TestSoftAggregate:
    def test_scalar_fold(self):
        # |0.8 - |0.1 - 0.9|| = 0.0
        out = soft_aggregate([[0.9], [0.1], [0.8]])
        assert out[0] == pytest.approx(0.0, abs=1e-15)

    def test_binary_inputs_match_xor(self):
        out = soft_aggregate([[1.0], [0.0], [1.0]])
        assert out[0] == 1 ^ 0 ^ 1

    def test_single_code_unchanged(self):
        out = soft_aggregate([[0.3, 0.7]])
        assert out.tolist() == [0.3, 0.7]

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            soft_aggregate([])

    def test_mixed_lengths_rejected(self):
        with pytest.raises(InvalidInputError):
            soft_aggregate([[0.1, 0.2], [0.3]])

    def test_out_of_range_rejected(self):
        with pytest.raises(InvalidInputError):
            soft_aggregate([[1.2], [0.0]])

    def test_batch_axis_carried_through(self, rng):
        stack = rng.uniform(0, 1, size=(5, 7, 3))
        batched = soft_aggregate(stack)
        for t in range(7):
            single = soft_aggregate(stack[:, t, :])
            assert np.array_equal(batched[t], single)

    @given(st.integers(1, 12), st.integers(1, 16), st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_output_stays_in_unit_interval(self, p, l, seed):
        stack = np.random.default_rng(seed).uniform(0, 1, size=(p, l))
        out = soft_aggregate(stack)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestBinaryAggregate:
    def test_xor_pair(self):
        a = BitCode.from_bits([1, 0, 1, 0])
        b = BitCode.from_bits([0, 1, 1, 0])
        assert np.array_equal(binary_aggregate([a, b]).bits(), [1, 1, 0, 0])

    def test_self_cancellation(self, rng):
        code = random_code(rng, 64)
        assert binary_aggregate([code, code]).bits().sum() == 0

    def test_order_invariance_all_permutations(self, rng):
        import itertools

        codes = [random_code(rng, 16) for _ in range(3)]
        results = {
            binary_aggregate([codes[i] for i in perm])
            for perm in itertools.permutations(range(3))
        }
        assert len(results) == 1

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            binary_aggregate([])

    def test_mixed_lengths_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            binary_aggregate([random_code(rng, 8), random_code(rng, 16)])


class TestHamming:
    def test_spec_example(self):
        a = BitCode.from_bits([1, 0, 1, 0])
        b = BitCode.from_bits([0, 1, 1, 0])
        assert hamming(a, b) == 2
        assert normalized_hamming(a, b) == 0.5

    def test_identity_and_complement(self, rng):
        code = random_code(rng, 33)
        assert hamming(code, code) == 0
        assert hamming(code, ~code) == 33
        assert normalized_hamming(code, ~code) == 1.0

    def test_length_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            hamming(random_code(rng, 8), random_code(rng, 16))

    def test_matches_bitloop_oracle(self, rng):
        for nbits in (8, 13, 16, 64, 100):
            for _ in range(25):
                a = random_code(rng, nbits)
                b = random_code(rng, nbits)
                assert hamming(a, b) == hamming_bitloop(a, b)

    @given(st.integers(1, 128), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_metric_axioms(self, nbits, seed):
        gen = np.random.default_rng(seed)
        x = random_code(gen, nbits)
        y = random_code(gen, nbits)
        z = random_code(gen, nbits)
        assert hamming(x, y) >= 0
        assert (hamming(x, y) == 0) == (x == y)
        assert hamming(x, y) == hamming(y, x)
        assert hamming(x, z) <= hamming(x, y) + hamming(y, z)


class TestBulkKernels:
    def test_bulk_matches_pairwise(self, rng):
        query = random_code(rng, 48)
        codes = [random_code(rng, 48) for _ in range(50)]
        distances = bulk_hamming(query, pack_code_matrix(codes))
        assert distances.tolist() == [hamming(query, c) for c in codes]

    def test_xor_aggregate_packed_matches_object_level(self, rng):
        codes = [random_code(rng, 24) for _ in range(7)]
        packed = xor_aggregate_packed(pack_code_matrix(codes))
        assert np.array_equal(packed, binary_aggregate(codes).packed)


class TestSoftHardRelations:
    """Bridging facts: the fold on exact or near-binary codes versus XOR."""

    def test_xor_equivalence_random(self, rng):
        for _ in range(50):
            p = int(rng.integers(1, 20))
            l = int(rng.integers(1, 40))
            bits = rng.integers(0, 2, size=(p, l))
            soft = soft_aggregate(bits.astype(np.float64))
            hard = binary_aggregate([BitCode.from_bits(b) for b in bits])
            assert np.array_equal(soft.astype(np.uint8), hard.bits())

    def test_three_element_epsilon_bound(self, rng):
        eps = 1e-2
        for _ in range(100):
            bits = rng.integers(0, 2, size=(3, 8)).astype(np.float64)
            delta = rng.uniform(0, eps, size=bits.shape)
            soft = np.abs(bits - delta)
            out = soft_aggregate(soft)
            xor = soft_aggregate(bits)
            assert np.all(np.abs(out - xor) <= 3 * eps + 1e-12)

    def test_permutation_bound_three_elements(self, rng):
        import itertools

        eps = 1e-2
        for _ in range(50):
            bits = rng.integers(0, 2, size=(3, 4)).astype(np.float64)
            soft = np.abs(bits - rng.uniform(0, eps, size=bits.shape))
            outputs = [
                soft_aggregate(soft[list(perm)])
                for perm in itertools.permutations(range(3))
            ]
            for a in outputs:
                for b in outputs:
                    assert np.all(np.abs(a - b) <= 6 * eps + 1e-12)
