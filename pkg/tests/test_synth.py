import numpy as np
import pytest

from hashscd.errors import InvalidInputError
from hashscd.features import describe_patch
from hashscd.synth import (
    ChangeRect,
    SynthChangeSpec,
    SynthClusterSpec,
    gen_clusters,
    gen_pair,
)


class TestGenPair:
    def test_no_rects_zero_nuisance_identical(self):
        spec = SynthChangeSpec(height=48, width=48, seed=3)
        t0, t1, mask = gen_pair(spec)
        assert np.array_equal(t0, t1)
        assert not mask.any()

    def test_full_image_rect(self):
        spec = SynthChangeSpec(
            height=32, width=32,
            rects=(ChangeRect(0, 0, 32, 32),), seed=1,
        )
        _, _, mask = gen_pair(spec)
        assert mask.all()

    def test_mask_is_exact_union(self):
        rects = (ChangeRect(2, 3, 5, 6), ChangeRect(10, 10, 4, 4, fill="texture"))
        spec = SynthChangeSpec(height=24, width=24, rects=rects, seed=7)
        t0, t1, mask = gen_pair(spec)
        expected = np.zeros((24, 24), bool)
        expected[2:7, 3:9] = True
        expected[10:14, 10:14] = True
        assert np.array_equal(mask, expected)
        # Outside the union the pair is byte-identical; inside it differs.
        assert np.array_equal(t0[~mask], t1[~mask])
        assert (t0[mask] != t1[mask]).any()

    def test_reproducible(self):
        spec = SynthChangeSpec(
            height=20, width=20, rects=(ChangeRect(1, 1, 4, 4),), seed=11,
        )
        a = gen_pair(spec)
        b = gen_pair(spec)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_nuisance_changes_unmasked_pixels(self):
        spec = SynthChangeSpec(height=20, width=20, nuisance=0.5, seed=2)
        t0, t1, mask = gen_pair(spec)
        assert not mask.any()
        assert not np.array_equal(t0, t1)

    def test_out_of_bounds_rect_rejected(self):
        with pytest.raises(InvalidInputError):
            SynthChangeSpec(height=10, width=10, rects=(ChangeRect(5, 5, 6, 6),))


class TestGenClusters:
    def test_zero_jitter_items_identical(self):
        spec = SynthClusterSpec(clusters=2, items_per_cluster=3, jitter=0.0, seed=1)
        images = gen_clusters(spec)
        by_label = {}
        for label, img in images:
            by_label.setdefault(label, []).append(img)
        for label, items in by_label.items():
            for other in items[1:]:
                assert np.array_equal(items[0], other)

    def test_counts(self):
        spec = SynthClusterSpec(clusters=4, items_per_cluster=8, seed=0)
        images = gen_clusters(spec)
        assert len(images) == 32
        labels = [label for label, _ in images]
        assert sorted(set(labels)) == [0, 1, 2, 3]

    def test_descriptor_separation(self):
        # Oracle: compute descriptor distances directly; with jitter 0 the
        # within-cluster distance is exactly 0 and across clusters it is not.
        spec = SynthClusterSpec(clusters=3, items_per_cluster=2,
                                separation=1.0, jitter=0.0, seed=5,
                                height=32, width=32)
        images = gen_clusters(spec)
        descs = {}
        for label, img in images:
            descs.setdefault(label, []).append(describe_patch(img))
        for label, pair in descs.items():
            assert np.linalg.norm(pair[0] - pair[1]) == 0.0
        labels = sorted(descs)
        for i in labels:
            for j in labels:
                if i < j:
                    dist = np.linalg.norm(descs[i][0] - descs[j][0])
                    assert dist > 0.05

    def test_deterministic(self):
        spec = SynthClusterSpec(clusters=2, items_per_cluster=2, jitter=0.3, seed=9)
        a = gen_clusters(spec)
        b = gen_clusters(spec)
        for (la, ia), (lb, ib) in zip(a, b):
            assert la == lb and np.array_equal(ia, ib)

    def test_single_cluster_rejected(self):
        with pytest.raises(InvalidInputError):
            SynthClusterSpec(clusters=1, items_per_cluster=2)


class TestPipelinePropagation:
    def test_zero_nuisance_unchanged_cells_hash_identically(self):
        from hashscd.features import compute_feature_map
        from hashscd.model import hash_image, init_params

        rect = ChangeRect(16, 16, 16, 16)  # exactly cell (1,1) of a 3x3 grid on 48x48
        spec = SynthChangeSpec(height=48, width=48, rects=(rect,), seed=21)
        t0, t1, _ = gen_pair(spec)
        params = init_params(16, 64, seed=0)
        h0 = hash_image(params, compute_feature_map(t0, 3, 3))
        h1 = hash_image(params, compute_feature_map(t1, 3, 3))
        for idx in range(9):
            if idx == 4:
                continue
            assert h0.patch_codes[idx] == h1.patch_codes[idx]
