import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canet.prep import (AugmentConfig, PrepStats, augment, clip_normalize, foreground_stats, gamma_transform,
                        median_spacing, resample_image, resample_mask, rotation_matrix, spatial_coords,
                        warp_pair)
from canet.voxcore import LabelMap, Rng, Volume

ISO = (1.0, 1.0, 1.0)


class TestMedianSpacing:
    def test_examples(self):
        assert median_spacing([(1, 1, 1)]) == (1, 1, 1)
        assert median_spacing([(1, 1, 1), (1, 1, 2), (1, 1, 3)]) == (1, 1, 2)
        assert median_spacing([(1, 1, 1), (2, 2, 4)]) == (1.5, 1.5, 2.5)

    def test_empty(self):
        with pytest.raises(ValueError):
            median_spacing([])


class TestResampleImage:
    def test_constant_any_target(self):
        v = Volume(np.full((5, 6, 7), 3.25, np.float32), (1.0, 2.0, 0.7))
        out = resample_image(v, (0.8, 1.3, 2.1))
        assert out.dims == (6, 9, 2)
        np.testing.assert_allclose(out.data, 3.25, atol=1e-6)
        assert out.spacing == (0.8, 1.3, 2.1)

    def test_identity_target(self):
        v = Volume(Rng(1).normal((4, 5, 6)).astype(np.float32), (1.5, 1.0, 2.0))
        out = resample_image(v, v.spacing)
        np.testing.assert_allclose(out.data, v.data, atol=1e-5)

    def test_linear_ramp_upsampled(self):
        depth = 10
        ramp = np.arange(depth, dtype=np.float32).reshape(depth, 1, 1) * np.ones((1, 3, 3), np.float32)
        out = resample_image(Volume(ramp, (2.0, 1.0, 1.0)), (1.0, 1.0, 1.0))
        assert out.dims == (20, 3, 3)
        # output voxel j maps to input coordinate (j + 0.5) / 2 - 0.5
        want = (np.arange(20) + 0.5) / 2 - 0.5
        interior = slice(4, 16)  # away from the clamped border taps
        np.testing.assert_allclose(out.data[interior, 1, 1], want[interior], atol=1e-4)

    def test_extent_preserved(self):
        v = Volume(np.zeros((13, 17, 9), np.float32), (1.3, 0.7, 2.9))
        target = (1.0, 1.1, 0.6)
        out = resample_image(v, target)
        for n, s, m, t in zip(v.dims, v.spacing, out.dims, target):
            assert abs(n * s - m * t) <= t / 2 + 1e-9

    def test_rejects_bad_target(self):
        v = Volume(np.zeros((3, 3, 3), np.float32), ISO)
        with pytest.raises(ValueError):
            resample_image(v, (1.0, 0.0, 1.0))


class TestResampleMask:
    def test_examples(self):
        m = LabelMap(np.array([1, 2]).reshape(2, 1, 1), ISO)
        assert resample_mask(m, (0.5, 1.0, 1.0)).data.ravel().tolist() == [1, 1, 2, 2]
        u = LabelMap(np.full((4, 5, 6), 3), ISO)
        assert np.all(resample_mask(u, (0.7, 1.9, 1.3)).data == 3)
        r = LabelMap(Rng(0).integers(0, 5, (4, 4, 4)), (1.0, 2.0, 1.0))
        assert np.array_equal(resample_mask(r, r.spacing).data, r.data)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.tuples(*[st.floats(0.4, 3.0)] * 3))
    def test_never_invents_labels(self, seed, target):
        rng = Rng(seed)
        dims = tuple(int(n) for n in rng.integers(1, 8, 3))
        allowed = rng.permutation(5)[: int(rng.integers(1, 5))]
        data = allowed[rng.integers(0, len(allowed), dims)]
        out = resample_mask(LabelMap(data, ISO), target)
        assert set(np.unique(out.data)) <= set(np.unique(data))


class TestStats:
    def test_ramp_pool(self):
        v = Volume(np.arange(1, 1001, dtype=np.float32).reshape(10, 10, 10), ISO)
        m = LabelMap(np.ones((10, 10, 10), np.int8), ISO)
        s = foreground_stats([v], [m])
        assert s.clip_lo == pytest.approx(1.4995, abs=1e-9)
        assert s.clip_hi == pytest.approx(995.005, abs=1e-9)
        pool = np.clip(np.arange(1, 1001, dtype=np.float64), 1.4995, 995.005)
        assert s.mu == pytest.approx(pool.mean()) and s.sigma == pytest.approx(pool.std())

    def test_constant_pool(self):
        v = Volume(np.full((3, 3, 3), 7.0, np.float32), ISO)
        m = LabelMap(np.ones((3, 3, 3)), ISO)
        s = foreground_stats([v], [m])
        assert (s.clip_lo, s.clip_hi, s.mu, s.sigma) == (7.0, 7.0, 7.0, 0.0)

    def test_empty_foreground(self):
        v = Volume(np.ones((3, 3, 3), np.float32), ISO)
        with pytest.raises(ValueError, match="empty foreground"):
            foreground_stats([v], [LabelMap(np.zeros((3, 3, 3)), ISO)])

    def test_only_foreground_pooled(self):
        data = np.zeros((2, 2, 2), np.float32)
        data[0] = 100.0
        mask = np.zeros((2, 2, 2), np.int8)
        mask[0] = 1
        s = foreground_stats([Volume(data, ISO)], [LabelMap(mask, ISO)])
        assert s.mu == 100.0

    def test_save_load_exact(self, tmp_path):
        s = PrepStats((0.7, 0.8, 2.5), -79.123456789, 301.1, 104.0 / 3, math.pi)
        s.save(tmp_path / "s.txt")
        assert PrepStats.load(tmp_path / "s.txt") == s


class TestClipNormalize:
    def test_three_values(self):
        s = PrepStats(ISO, 0.0, 10.0, 4.0, math.sqrt(8 / 3))
        z = clip_normalize(Volume(np.array([2, 4, 6], np.float32).reshape(3, 1, 1), ISO), s)
        np.testing.assert_allclose(z.data.ravel(), [-1.2247, 0.0, 1.2247], atol=1e-4)

    def test_mean_maps_to_zero(self):
        s = PrepStats(ISO, 0.0, 10.0, 4.0, 2.0)
        assert np.all(clip_normalize(Volume(np.full((2, 2, 2), 4.0, np.float32), ISO), s).data == 0)

    def test_clip_then_normalize(self):
        s = PrepStats(ISO, 1.5, 995.0, 500.0, 100.0)
        z = clip_normalize(Volume(np.full((1, 1, 1), 2000.0, np.float32), ISO), s)
        assert z.data.item() == pytest.approx(4.95, abs=1e-6)

    def test_degenerate_sigma(self):
        s = PrepStats(ISO, 0.0, 1.0, 0.5, 0.0)
        assert np.all(clip_normalize(Volume(np.ones((2, 2, 2), np.float32), ISO), s).data == 0)

    def test_idempotent_under_own_stats(self):
        v = Volume(Rng(2).normal((6, 6, 6)).astype(np.float32) * 30 + 50, ISO)
        m = LabelMap(np.ones((6, 6, 6)), ISO)
        z = clip_normalize(v, foreground_stats([v], [m], clip_percentiles=(0.0, 100.0)))
        again = clip_normalize(z, PrepStats(ISO, float(z.data.min()), float(z.data.max()), 0.0, 1.0))
        np.testing.assert_allclose(again.data, z.data, atol=1e-6)


def _pair(seed, dims=(9, 9, 9)):
    rng = Rng(seed)
    v = Volume(rng.normal(dims).astype(np.float32), ISO)
    m = LabelMap(rng.integers(0, 5, dims), ISO)
    return v, m


class TestAugment:
    def test_all_off_is_identity(self):
        v, m = _pair(0)
        ov, om = augment(v, m, AugmentConfig.disabled(), Rng(1))
        assert np.array_equal(ov.data, v.data) and np.array_equal(om.data, m.data)

    def test_gamma_one(self):
        v, _ = _pair(1)
        np.testing.assert_allclose(gamma_transform(v, 1.0).data, v.data, atol=1e-5)

    def test_gamma_keeps_range(self):
        v, _ = _pair(2)
        g = gamma_transform(v, 1.4).data
        assert g.min() == pytest.approx(v.data.min(), abs=1e-5)
        assert g.max() == pytest.approx(v.data.max(), abs=1e-5)

    def test_rotation_90_is_permutation(self):
        v, m = _pair(3)
        coords = spatial_coords(v.dims, rotation=rotation_matrix(0, 90.0))
        rv, rm = warp_pair(v, m, coords)
        # rotation about depth: output (d, h, w) reads input (d, w, n-1-h)
        n = v.dims[1]
        d, h, w = np.meshgrid(*[np.arange(k) for k in v.dims], indexing="ij")
        want_v = v.data[d, w, n - 1 - h]
        want_m = m.data[d, w, n - 1 - h]
        np.testing.assert_allclose(rv.data, want_v, atol=1e-6)
        assert np.array_equal(rm.data, want_m)
        # a permutation: same multiset of values
        assert np.array_equal(np.sort(rv.data.ravel()), np.sort(v.data.ravel()))

    def test_reproducible(self):
        v, m = _pair(4, (12, 12, 12))
        cfg = AugmentConfig(p_scale=1.0, p_rotation=1.0, p_elastic=1.0, p_gamma=1.0)
        a = augment(v, m, cfg, Rng(11))
        b = augment(v, m, cfg, Rng(11))
        assert a[0].data.tobytes() == b[0].data.tobytes()
        assert a[1].data.tobytes() == b[1].data.tobytes()

    def test_labels_stay_in_input_set(self):
        v, m = _pair(5, (12, 12, 12))
        cfg = AugmentConfig(p_scale=1.0, p_rotation=1.0, p_elastic=1.0, p_gamma=0.0)
        _, om = augment(v, m, cfg, Rng(2))
        assert set(np.unique(om.data)) <= set(np.unique(m.data)) | {0}

    def test_padding_uses_volume_minimum(self):
        v, m = _pair(6)
        rv, rm = warp_pair(v, m, spatial_coords(v.dims, scale=0.5))
        assert rv.data[0, 0, 0] == pytest.approx(v.data.min(), abs=1e-6)
        assert rm.data[0, 0, 0] == 0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AugmentConfig(scale_range=(1.2, 0.9))
        with pytest.raises(ValueError):
            AugmentConfig(p_gamma=1.5)
