import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canet.loss import LossConfig, ce_loss, dice_coefficient, dice_loss, one_hot, total_loss
from canet.voxcore import Rng, softmax_channels


def labels_1d(values):
    return np.asarray(values).reshape(1, 1, 1, len(values))


class TestDice:
    def test_perfect(self):
        t = one_hot(labels_1d([1] * 10 + [0] * 5), 2)
        assert dice_coefficient(t, t, smooth=1.0)[1] == pytest.approx(1.0)

    def test_disjoint(self):
        pred = one_hot(labels_1d([1] * 10 + [0] * 10), 2)
        target = one_hot(labels_1d([0] * 10 + [1] * 10), 2)
        assert dice_coefficient(pred, target, smooth=1.0)[1] == pytest.approx(1 / 21, abs=1e-6)
        assert dice_loss(pred, target, LossConfig(smooth=1.0)) == pytest.approx(1 - 1 / 21, abs=1e-6)

    def test_empty_empty_is_one(self):
        t = one_hot(labels_1d([0, 0, 0]), 3)
        assert dice_coefficient(t, t, smooth=0.0)[2] == 1.0

    def test_uniform_two_class(self):
        n = 12
        pred = np.full((1, 2, 1, 1, n), 0.5)
        target = one_hot(labels_1d([1] * n), 2, np.float64)
        assert dice_coefficient(pred, target, 0.0)[1] == pytest.approx(2 / 3)
        assert dice_loss(pred, target, LossConfig(smooth=0.0)) == pytest.approx(1 / 3)

    def test_aggregation_modes(self):
        pred = one_hot(labels_1d([0, 1, 2, 2]), 3, np.float64)
        target = one_hot(labels_1d([0, 1, 1, 2]), 3, np.float64)
        dsc = dice_coefficient(pred, target, 0.0)
        assert dice_loss(pred, target, LossConfig(smooth=0.0)) == pytest.approx(1 - dsc[1:].mean())
        assert dice_loss(pred, target, LossConfig(smooth=0.0, dice_aggregation="all")) == \
            pytest.approx(1 - dsc.mean())

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            dice_coefficient(np.zeros((1, 2, 1, 1, 3)), np.zeros((1, 2, 1, 1, 4)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 2))
    def test_range_and_symmetry(self, seed, smooth):
        rng = Rng(seed)
        p = rng.uniform((2, 3, 2, 2, 2))
        t = one_hot(rng.integers(0, 3, (2, 2, 2, 2)), 3, np.float64)
        d = dice_coefficient(p, t, smooth)
        assert np.all((d >= 0) & (d <= 1 + 1e-12))
        b = one_hot(rng.integers(0, 3, (2, 2, 2, 2)), 3, np.float64)
        np.testing.assert_allclose(dice_coefficient(b, t, smooth), dice_coefficient(t, b, smooth))


class TestCE:
    def test_exact_match_zero(self):
        t = one_hot(labels_1d([0, 1, 1]), 2, np.float64)
        assert ce_loss(t, t) == pytest.approx(0.0, abs=1e-6)

    def test_half(self):
        pred = np.full((1, 2, 1, 1, 1), 0.5)
        t = one_hot(labels_1d([1]), 2, np.float64)
        assert ce_loss(pred, t) == pytest.approx(math.log(2), abs=1e-6)

    def test_clamped(self):
        pred = np.array([1.0, 0.0]).reshape(1, 2, 1, 1, 1)
        t = one_hot(labels_1d([1]), 2, np.float64)
        assert ce_loss(pred, t) == pytest.approx(-math.log(1e-7), rel=1e-9)


class TestTotal:
    def test_additive(self):
        rng = Rng(1)
        logits = rng.normal((2, 5, 3, 3, 3)).astype(np.float32)
        t = one_hot(rng.integers(0, 5, (2, 3, 3, 3)), 5)
        cfg = LossConfig()
        total, _, parts = total_loss(logits, t, cfg)
        p = softmax_channels(logits)
        assert total == dice_loss(p, t, cfg) + ce_loss(p, t)
        assert total == parts["dice"] + parts["ce"]

    def test_perfect_prediction(self):
        labels = Rng(2).integers(0, 5, (1, 4, 4, 4))
        t = one_hot(labels, 5, np.float64)
        logits = (t * 2 - 1) * 40.0
        total, g, _ = total_loss(logits, t, LossConfig(smooth=1e-5))
        assert total < 1e-4
        assert np.linalg.norm(g) < 1e-4

    @pytest.mark.parametrize("cfg", [LossConfig(), LossConfig(smooth=1.0, dice_aggregation="all"),
                                     LossConfig(class_weights=(1.0, 2.0))])
    def test_gradient_matches_differences(self, cfg):
        rng = Rng(3)
        logits = rng.normal((1, 2, 2, 2, 2))
        t = one_hot(rng.integers(0, 2, (1, 2, 2, 2)), 2, np.float64)
        _, g, _ = total_loss(logits, t, cfg)
        h = 1e-6
        num = np.zeros_like(logits)
        for idx in np.ndindex(logits.shape):
            up, down = logits.copy(), logits.copy()
            up[idx] += h
            down[idx] -= h
            num[idx] = (total_loss(up, t, cfg)[0] - total_loss(down, t, cfg)[0]) / (2 * h)
        np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-10)

    def test_non_negative(self):
        for seed in range(10):
            rng = Rng(seed)
            logits = rng.normal((1, 3, 2, 2, 2)) * 3
            t = one_hot(rng.integers(0, 3, (1, 2, 2, 2)), 3, np.float64)
            assert total_loss(logits, t)[0] >= 0


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(smooth=-1)
    with pytest.raises(ValueError):
        LossConfig(dice_aggregation="median")
    with pytest.raises(ValueError):
        LossConfig(class_weights=(1.0, 0.0))
