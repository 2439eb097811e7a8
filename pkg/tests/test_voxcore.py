import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canet.voxcore import (LabelMap, Rng, Volume, percentile, rng_normal, softmax_channels,
                           tensor_from_bytes, tensor_to_bytes)


def _logits(*vals):
    return np.array(vals, dtype=np.float32).reshape(1, len(vals), 1, 1, 1)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax_channels(_logits(0, 0)).ravel(), [0.5, 0.5])

    def test_ln2(self):
        out = softmax_channels(_logits(math.log(2), 0)).ravel()
        np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-7)

    def test_saturates_without_overflow(self):
        out = softmax_channels(_logits(1000, 0)).ravel()
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-6)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite logits"):
            softmax_channels(_logits(np.nan, 0))
        with pytest.raises(ValueError, match="non-finite logits"):
            softmax_channels(_logits(np.inf, 0))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
    def test_shift_invariance_and_argmax(self, seed, shift):
        x = Rng(seed).normal((2, 4, 2, 3, 2)).astype(np.float32) * 5
        p = softmax_channels(x)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(softmax_channels(x + np.float32(shift)), p, atol=1e-6)
        assert np.array_equal(p.argmax(axis=1), x.argmax(axis=1))


class TestPercentile:
    def test_examples(self):
        assert percentile([1, 2, 3], 50) == 2
        assert percentile(list(range(1, 101)), 99.5) == pytest.approx(99.505, abs=1e-12)
        assert percentile([5], 0.05) == 5

    def test_errors(self):
        with pytest.raises(ValueError):
            percentile([], 50)
        with pytest.raises(ValueError):
            percentile([1, 2], 101)
        with pytest.raises(ValueError):
            percentile([1, 2], -1)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.floats(0, 100), st.floats(0, 100))
    def test_bounds_and_monotone(self, vals, p, q):
        assert percentile(vals, 0) == min(vals)
        assert percentile(vals, 100) == max(vals)
        lo, hi = sorted((p, q))
        assert percentile(vals, lo) <= percentile(vals, hi) + 1e-9 * (1 + max(map(abs, vals)))

    def test_matches_sort_oracle(self):
        vals = Rng(3).uniform(20)
        s = sorted(vals)
        for p in (0.05, 12.5, 50, 99.5):
            r = p / 100 * (len(s) - 1)
            i = int(math.floor(r))
            want = s[i] + (r - i) * (s[min(i + 1, len(s) - 1)] - s[i])
            assert percentile(vals, p) == pytest.approx(want, abs=1e-12)


class TestRng:
    def test_normal_examples(self):
        assert len(rng_normal(Rng(42), 0)) == 0
        assert np.array_equal(rng_normal(Rng(42), 4), rng_normal(Rng(42), 4))
        big = rng_normal(Rng(42), 100_000)
        assert -0.02 < big.mean() < 0.02
        assert 0.98 < big.std() < 1.02

    def test_negative_count(self):
        with pytest.raises(ValueError):
            rng_normal(Rng(0), -1)

    def test_seeds_differ(self):
        assert not np.array_equal(Rng(1).uniform(8), Rng(2).uniform(8))

    def test_children_are_deterministic(self):
        a, b = Rng(9), Rng(9)
        assert np.array_equal(a.child().uniform(5), b.child().uniform(5))

    def test_counter_advances(self):
        r = Rng(0)
        c0 = r.counter
        r.uniform(10)
        assert r.counter > c0


class TestContainers:
    def test_volume_validation(self):
        with pytest.raises(ValueError):
            Volume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))
        with pytest.raises(ValueError):
            Volume(np.zeros((2, 2)), (1.0, 1.0, 1.0))
        v = Volume(np.zeros((2, 3, 4)), (1.0, 1.0, 1.0))
        assert v.dims == (2, 3, 4) and v.data.dtype == np.float32

    def test_labelmap_rejects_unknown_class(self):
        with pytest.raises(ValueError):
            LabelMap(np.full((2, 2, 2), 5), (1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            LabelMap(np.full((2, 2, 2), -1), (1.0, 1.0, 1.0))

    def test_tensor_bytes_round_trip(self):
        t = Rng(5).normal((2, 3, 4, 5, 6)).astype(np.float32)
        back = tensor_from_bytes(tensor_to_bytes(t))
        assert back.shape == t.shape and back.tobytes() == t.tobytes()
