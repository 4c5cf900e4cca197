import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hashscd.change import (
    detect_global,
    f1,
    iou,
    load_mask_png,
    localize,
    save_heatmap_png,
    save_mask_png,
    threshold_heatmap,
    upsample,
)
from hashscd.errors import InvalidInputError
from hashscd.hash_space import BitCode

from .conftest import random_code


class TestDetectGlobal:
    def test_identical_codes(self, rng):
        code = random_code(rng, 32)
        for theta in (0.0, 0.3, 1.0):
            changed, distance = detect_global(code, code, theta)
            assert changed is False and distance == 0.0

    def test_complements(self, rng):
        code = random_code(rng, 32)
        changed, distance = detect_global(code, ~code, 0.99)
        assert changed is True and distance == 1.0

    def test_boundary_is_strict(self):
        a = BitCode.from_bits([1, 0, 1, 0])
        b = BitCode.from_bits([0, 1, 1, 0])
        changed, distance = detect_global(a, b, 0.5)
        assert distance == 0.5 and changed is False

    def test_length_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            detect_global(random_code(rng, 8), random_code(rng, 16), 0.5)


class TestLocalize:
    def test_equal_codes_zero_grid(self, rng):
        codes = [random_code(rng, 16) for _ in range(6)]
        grid = localize(codes, list(codes), 2, 3)
        assert np.array_equal(grid, np.zeros((2, 3)))

    def test_single_complemented_cell(self, rng):
        codes_a = [random_code(rng, 16) for _ in range(4)]
        codes_b = list(codes_a)
        codes_b[2] = ~codes_a[2]
        grid = localize(codes_a, codes_b, 2, 2)
        assert grid[1, 0] == 1.0
        grid[1, 0] = 0.0
        assert np.array_equal(grid, np.zeros((2, 2)))

    def test_values_quantized(self, rng):
        codes_a = [random_code(rng, 64) for _ in range(4)]
        codes_b = [random_code(rng, 64) for _ in range(4)]
        grid = localize(codes_a, codes_b, 2, 2)
        assert np.array_equal(grid * 64, np.rint(grid * 64))

    def test_geometry_mismatch(self, rng):
        codes = [random_code(rng, 16) for _ in range(4)]
        with pytest.raises(InvalidInputError):
            localize(codes, codes[:3], 2, 2)


class TestUpsample:
    def test_constant_grid(self):
        out = upsample(np.full((3, 3), 0.25), 12, 9)
        assert np.allclose(out, 0.25)
        assert out.shape == (12, 9)

    def test_single_cell(self):
        out = upsample(np.array([[0.7]]), 5, 8)
        assert np.allclose(out, 0.7)

    def test_two_by_two_ramp(self):
        # Oracle: evaluate the cell-center bilinear formula per pixel.
        grid = np.array([[0.0, 1.0], [0.0, 1.0]])
        out = upsample(grid, 4, 4)

        def reference(y, x):
            gy = min(max((y + 0.5) * 2 / 4 - 0.5, 0.0), 1.0)
            gx = min(max((x + 0.5) * 2 / 4 - 0.5, 0.0), 1.0)
            y0, x0 = int(np.floor(gy)), int(np.floor(gx))
            y1, x1 = min(y0 + 1, 1), min(x0 + 1, 1)
            wy, wx = gy - y0, gx - x0
            top = grid[y0, x0] * (1 - wx) + grid[y0, x1] * wx
            bot = grid[y1, x0] * (1 - wx) + grid[y1, x1] * wx
            return top * (1 - wy) + bot * wy

        expected = np.array([[reference(y, x) for x in range(4)] for y in range(4)])
        assert np.allclose(out, expected)
        assert np.allclose(expected[0], [0.0, 0.25, 0.75, 1.0])
        for row in range(1, 4):
            assert np.array_equal(out[row], out[0])

    def test_target_smaller_than_grid_rejected(self):
        with pytest.raises(InvalidInputError):
            upsample(np.zeros((4, 4)), 3, 8)

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_range_preservation(self, gh, gw, seed):
        grid = np.random.default_rng(seed).uniform(0, 1, size=(gh, gw))
        out = upsample(grid, gh * 3 + 1, gw * 2 + 3)
        assert out.min() >= grid.min() - 1e-12
        assert out.max() <= grid.max() + 1e-12


class TestThreshold:
    def test_exact_half_is_unchanged(self):
        mask = threshold_heatmap(np.full((3, 3), 0.5), 0.5)
        assert not mask.any()

    def test_just_above(self):
        mask = threshold_heatmap(np.full((3, 3), 0.51), 0.5)
        assert mask.all()

    def test_per_pixel_independence(self):
        hm = np.array([[0.2, 0.8], [0.5, 0.500001]])
        mask = threshold_heatmap(hm, 0.5)
        assert mask.tolist() == [[False, True], [False, True]]


class TestMaskMetrics:
    def test_perfect_match(self):
        gt = np.zeros((4, 4), bool)
        gt[1:3, 1:3] = True
        assert f1(gt, gt) == 1.0
        assert iou(gt, gt) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), bool)
        b = np.zeros((4, 4), bool)
        a[0, 0] = True
        b[3, 3] = True
        assert f1(a, b) == 0.0
        assert iou(a, b) == 0.0

    def test_known_counts(self):
        # TP=2, FP=1, FN=1.
        pred = np.array([[1, 1, 1, 0]], dtype=bool)
        gt = np.array([[1, 1, 0, 1]], dtype=bool)
        assert f1(pred, gt) == pytest.approx(4 / 6)
        assert iou(pred, gt) == pytest.approx(0.5)

    def test_both_empty_is_one(self):
        empty = np.zeros((3, 3), bool)
        assert f1(empty, empty) == 1.0
        assert iou(empty, empty) == 1.0

    def test_dim_mismatch(self):
        with pytest.raises(InvalidInputError):
            f1(np.zeros((2, 2), bool), np.zeros((3, 3), bool))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_f1_iou_relation(self, seed):
        gen = np.random.default_rng(seed)
        pred = gen.random((5, 5)) > 0.5
        gt = gen.random((5, 5)) > 0.5
        f1_val, iou_val = f1(pred, gt), iou(pred, gt)
        assert f1_val == pytest.approx(2 * iou_val / (1 + iou_val), abs=1e-12)


class TestPipeline:
    def test_zero_change_identity(self, rng):
        codes = [random_code(rng, 32) for _ in range(9)]
        grid = localize(codes, list(codes), 3, 3)
        heatmap = upsample(grid, 30, 30)
        assert np.array_equal(heatmap, np.zeros((30, 30)))
        mask = threshold_heatmap(heatmap, 0.0)
        assert not mask.any()

    def test_png_roundtrips(self, tmp_path, rng):
        hm = rng.uniform(0, 1, size=(16, 16))
        save_heatmap_png(hm, tmp_path / "hm.png")
        from PIL import Image

        stored = np.asarray(Image.open(tmp_path / "hm.png"))
        assert np.array_equal(stored, np.rint(hm * 255).astype(np.uint8))

        mask = rng.random((16, 16)) > 0.5
        save_mask_png(mask, tmp_path / "mask.png")
        assert np.array_equal(load_mask_png(tmp_path / "mask.png"), mask)
