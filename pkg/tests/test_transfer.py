"""Predictors, ranking losses, and objective combination."""

import math

import numpy as np
import pytest

from crossrec.transfer import (
    LossBundle,
    bpr_loss,
    bpr_loss_backward,
    cross_entropy_loss,
    score,
    total_loss,
)


class TestScore:
    def test_orthogonal_fusion(self):
        assert score([0.0, 0.0], [1.0, 1.0], [1.0, -1.0]) == 0.0

    def test_hand_arithmetic(self):
        assert score([1.0, 0.0], [0.0, 1.0], [2.0, 3.0]) == 5.0

    def test_matches_dot_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            h, t, i = rng.normal(size=(3, 7))
            expected = sum((h[k] + t[k]) * i[k] for k in range(7))
            assert score(h, t, i) == pytest.approx(expected, rel=1e-12)

    def test_batched_rows(self):
        rng = np.random.default_rng(1)
        h, t, i = rng.normal(size=(3, 4, 6))
        batched = score(h, t, i)
        assert batched.shape == (4,)
        for row in range(4):
            assert batched[row] == pytest.approx(score(h[row], t[row], i[row]))

    def test_bilinear_in_fused_vector(self):
        rng = np.random.default_rng(2)
        h, t, i = rng.normal(size=(3, 5))
        a = 2.75
        assert score(a * h, a * t, i) == pytest.approx(a * score(h, t, i))
        j = rng.normal(size=5)
        assert score(h, t, i + j) == pytest.approx(score(h, t, i) + score(h, t, j))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            score([1.0], [1.0, 2.0], [1.0, 2.0])


class TestBprLoss:
    def test_tied_scores_give_log_two(self):
        assert bpr_loss([1.5, -0.3], [1.5, -0.3]) == pytest.approx(
            math.log(2.0), abs=1e-15
        )

    def test_saturation_to_zero(self):
        assert bpr_loss([1e4], [0.0]) == pytest.approx(0.0, abs=1e-30)

    def test_unit_gap_scalar_oracle(self):
        assert bpr_loss([1.0], [0.0]) == pytest.approx(0.3132616875182228, abs=1e-12)

    def test_large_negative_gap_stable(self):
        value = bpr_loss([0.0], [800.0])
        assert np.isfinite(value) and value == pytest.approx(800.0, rel=1e-9)

    def test_translation_invariance_and_monotone(self):
        rng = np.random.default_rng(3)
        pos, neg = rng.normal(size=(2, 10))
        assert bpr_loss(pos + 3.7, neg + 3.7) == pytest.approx(bpr_loss(pos, neg))
        gaps = np.linspace(-3, 3, 30)
        values = [bpr_loss([g], [0.0]) for g in gaps]
        assert np.all(np.diff(values) < 0)

    def test_backward_is_sigmoid_of_gap(self):
        rng = np.random.default_rng(4)
        pos, neg = rng.normal(size=(2, 8))
        g_pos, g_neg = bpr_loss_backward(pos, neg)
        eps = 1e-6
        for i in range(8):
            bumped = pos.copy()
            bumped[i] += eps
            upper = bpr_loss(bumped, neg)
            bumped[i] -= 2 * eps
            lower = bpr_loss(bumped, neg)
            assert (upper - lower) / (2 * eps) == pytest.approx(g_pos[i], rel=1e-6, abs=1e-10)
        assert np.allclose(g_pos + g_neg, 0.0)

    def test_cross_entropy_alternative(self):
        value = cross_entropy_loss([0.0], [0.0])
        assert value == pytest.approx(math.log(2.0), abs=1e-12)


class TestTotalLoss:
    def test_zero_weights_keep_target_loss(self):
        bundle = total_loss(1.7, 9.9, 3.3, 4.4, (0.0, 0.0, 0.0))
        assert bundle.total == 1.7

    def test_hand_arithmetic(self):
        bundle = total_loss(1.0, 2.0, 3.0, 4.0, (0.1, 0.5, 0.25))
        assert bundle.total == pytest.approx(3.7, abs=1e-15)

    def test_default_weight_configuration(self):
        # the stock movie-target configuration: (0.01, 1.0, 1.0)
        bundle = total_loss(0.5, 0.25, 0.125, 0.0625, (0.01, 1.0, 1.0))
        assert bundle.total == pytest.approx(0.5 + 0.0025 + 0.125 + 0.0625)
        assert bundle.alphas == (0.01, 1.0, 1.0)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            total_loss(1.0, 1.0, 1.0, 1.0, (-0.1, 0.0, 0.0))

    def test_invariant_total_equals_weighted_sum(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            parts = rng.normal(size=4)
            alphas = tuple(rng.uniform(0, 2, size=3))
            bundle = total_loss(*parts, alphas)
            expected = parts[0] + alphas[0] * parts[1] + alphas[1] * parts[2] + alphas[2] * parts[3]
            assert bundle.total == pytest.approx(expected, rel=1e-15)

    def test_gradient_is_weighted_sum(self):
        # d total / d component == its weight, checked via finite differences
        alphas = (0.3, 0.7, 1.3)
        eps = 1e-6
        base = (0.9, 1.1, -0.4, 0.2)
        weights = (1.0, *alphas)
        for index in range(4):
            upper = list(base)
            lower = list(base)
            upper[index] += eps
            lower[index] -= eps
            numeric = (
                total_loss(*upper, alphas).total - total_loss(*lower, alphas).total
            ) / (2 * eps)
            assert numeric == pytest.approx(weights[index], rel=1e-5)

    def test_as_dict_roundtrip(self):
        bundle = total_loss(1.0, 2.0, 3.0, 4.0, (0.5, 0.5, 0.5))
        named = bundle.as_dict()
        assert named["total"] == bundle.total
        assert set(named) == {"pred_target", "pred_source", "kl", "contrastive", "total"}
