"""Loss values against hand-derived constants; gradients against finite differences."""

import math

import numpy as np
import pytest

from crossreg.errors import (
    EmptyOverlapError,
    EmptySampleError,
    NotNormalizedError,
)
from crossreg.losses import (
    CircleLossConfig,
    LossWeights,
    WarmupSchedule,
    circle_loss,
    gdc_loss,
    median_heuristic_bandwidth,
    mmd,
    normal_consistency_loss,
    self_similarity,
    total_loss,
    warmup_weight,
)
from crossreg.normals import NormalField


def unit_rows(rng: np.random.Generator, m: int, c: int) -> np.ndarray:
    x = rng.standard_normal((m, c))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def tangent_rows(rng: np.random.Generator, base: np.ndarray) -> np.ndarray:
    """Random directions orthogonal to each base row (unit-sphere tangent)."""
    t = rng.standard_normal(base.shape)
    t -= (np.einsum("mc,mc->m", t, base))[:, None] * base
    return t


class TestNormalConsistency:
    def test_hand_value(self):
        pred = NormalField(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]), np.ones(2, dtype=bool))
        tgt = NormalField(np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]), np.ones(2, dtype=bool))
        loss, grad = normal_consistency_loss(pred, tgt)
        # dots are 1 and 0, mean 0.5
        assert loss == 0.5
        np.testing.assert_array_equal(grad, -tgt.normals / 2.0)

    def test_identical_fields_zero_loss(self):
        rng = np.random.default_rng(0)
        n = unit_rows(rng, 40, 3)
        field = NormalField(n, np.ones(40, dtype=bool))
        loss, _ = normal_consistency_loss(field, field)
        assert abs(loss) < 1e-12

    def test_only_joint_support_counts(self):
        normals = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        pred = NormalField(normals, np.array([True, True, False]))
        tgt_normals = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        tgt = NormalField(tgt_normals, np.array([True, False, True]))
        loss, grad = normal_consistency_loss(pred, tgt)
        assert loss == 1.0 - 1.0 / 1.0  # only row 0 participates
        np.testing.assert_array_equal(grad[1], 0.0)
        np.testing.assert_array_equal(grad[2], 0.0)

    def test_disjoint_masks_raise(self):
        a = NormalField(np.array([[0.0, 0.0, 1.0]]), np.array([True]))
        b = NormalField(np.array([[0.0, 0.0, 1.0]]), np.array([False]))
        with pytest.raises(EmptyOverlapError):
            normal_consistency_loss(a, b)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            m = int(rng.integers(3, 20))
            base = unit_rows(rng, m, 3)
            tgt = NormalField(unit_rows(rng, m, 3), np.ones(m, dtype=bool))
            _, grad = normal_consistency_loss(
                NormalField(base, np.ones(m, dtype=bool)), tgt
            )
            direction = tangent_rows(rng, base)
            eps = 1e-6
            plus = NormalField(base + eps * direction, np.ones(m, dtype=bool))
            minus = NormalField(base - eps * direction, np.ones(m, dtype=bool))
            fd = (normal_consistency_loss(plus, tgt)[0] - normal_consistency_loss(minus, tgt)[0]) / (2 * eps)
            analytic = float(np.sum(grad * direction))
            assert abs(fd - analytic) <= 1e-4 * max(1e-8, abs(analytic))


class TestSelfSimilarity:
    def test_two_by_two_oracle(self):
        theta = 0.7
        feats = np.array([[1.0, 0.0], [math.cos(theta), math.sin(theta)]])
        s = self_similarity(feats)
        np.testing.assert_allclose(
            s, [[1.0, math.cos(theta)], [math.cos(theta), 1.0]], atol=1e-12
        )

    def test_rejects_unnormalized(self):
        with pytest.raises(NotNormalizedError):
            self_similarity(np.array([[1.0, 0.0], [2.0, 0.0]]))

    def test_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(12)
        s = self_similarity(unit_rows(rng, 15, 8))
        np.testing.assert_allclose(s, s.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(s), 1.0, atol=1e-12)


class TestGdcLoss:
    def test_frozen_two_by_two(self):
        f_img = np.eye(2)
        f_cloud = np.array([[1.0, 0.0], [1.0, 0.0]])
        loss, g_img, g_cloud = gdc_loss(f_img, f_cloud)
        assert loss == 2.0
        np.testing.assert_array_equal(g_img, [[0.0, -4.0], [-4.0, 0.0]])
        np.testing.assert_array_equal(g_cloud, [[4.0, 0.0], [4.0, 0.0]])

    def test_identical_structures_zero(self):
        rng = np.random.default_rng(3)
        f = unit_rows(rng, 10, 6)
        loss, g_img, g_cloud = gdc_loss(f, f)
        assert loss == 0.0
        np.testing.assert_array_equal(g_img, 0.0)
        np.testing.assert_array_equal(g_cloud, 0.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(77)
        for _ in range(6):
            m = int(rng.integers(3, 16))
            c = int(rng.integers(2, 16))
            img = unit_rows(rng, m, c)
            cloud = unit_rows(rng, m, c)
            _, g_img, g_cloud = gdc_loss(img, cloud)
            eps = 1e-6
            t_img = tangent_rows(rng, img)
            fd = (gdc_loss(img + eps * t_img, cloud)[0] - gdc_loss(img - eps * t_img, cloud)[0]) / (2 * eps)
            analytic = float(np.sum(g_img * t_img))
            assert abs(fd - analytic) <= 1e-4 * max(1.0, abs(analytic))
            t_cloud = tangent_rows(rng, cloud)
            fd = (gdc_loss(img, cloud + eps * t_cloud)[0] - gdc_loss(img, cloud - eps * t_cloud)[0]) / (2 * eps)
            analytic = float(np.sum(g_cloud * t_cloud))
            assert abs(fd - analytic) <= 1e-4 * max(1.0, abs(analytic))


class TestCircleLoss:
    def test_frozen_margin_case(self):
        cfg = CircleLossConfig()
        loss = circle_loss([cfg.delta_p], [cfg.delta_n], cfg)
        assert abs(loss - math.log(2.0) / cfg.gamma) < 1e-15

    def test_empty_side_is_zero(self):
        assert circle_loss([], [0.5]) == 0.0
        assert circle_loss([0.5], []) == 0.0
        assert circle_loss([], []) == 0.0

    def test_matches_naive_formula(self):
        # direct (non-LSE) evaluation in a range where exp cannot overflow
        rng = np.random.default_rng(5)
        cfg = CircleLossConfig()
        for _ in range(25):
            pos = rng.uniform(0.0, 1.2, rng.integers(1, 6))
            neg = rng.uniform(0.4, 2.0, rng.integers(1, 6))
            a = np.exp(cfg.gamma * (pos - cfg.delta_p) ** 2).sum()
            b = np.exp(cfg.gamma * (cfg.delta_n - neg) ** 2).sum()
            naive = math.log1p(a * b) / cfg.gamma
            assert abs(circle_loss(pos, neg, cfg) - naive) < 1e-9

    def test_no_overflow_for_large_gaps(self):
        loss = circle_loss([50.0], [200.0])
        assert np.isfinite(loss)
        assert loss > 0

    def test_monotone_in_hard_regimes(self):
        cfg = CircleLossConfig()
        # positives at or beyond delta_p: loss non-decreasing in distance
        sweep = [circle_loss([d], [cfg.delta_n + 0.1], cfg) for d in np.linspace(cfg.delta_p, 2.0, 30)]
        assert all(b >= a - 1e-12 for a, b in zip(sweep, sweep[1:]))
        # negatives at or below delta_n: loss non-increasing as distance grows
        sweep = [circle_loss([cfg.delta_p + 0.05], [d], cfg) for d in np.linspace(0.0, cfg.delta_n, 30)]
        assert all(b <= a + 1e-12 for a, b in zip(sweep, sweep[1:]))

    def test_rejects_negative_distance(self):
        with pytest.raises(ValueError):
            circle_loss([-0.1], [1.0])


class TestTotalAndWarmup:
    def test_total_weighted_sum(self):
        assert total_loss(2.0, 3.0, 4.0) == 2.0 + 3.0 + 0.5 * 4.0
        w = LossWeights(lambda_match=2.0, lambda_normal=0.0, lambda_gdc=1.0)
        assert total_loss(1.0, 99.0, 3.0, w) == 5.0

    def test_warmup_frozen_points(self):
        sched = WarmupSchedule(start=10, end=20)
        assert warmup_weight(5, sched) == 0.0
        assert warmup_weight(15, sched) == 0.5
        assert warmup_weight(25, sched) == 1.0

    def test_warmup_boundaries(self):
        sched = WarmupSchedule(start=10, end=20)
        assert warmup_weight(10, sched) == 0.0
        assert warmup_weight(19, sched) == 0.9
        assert warmup_weight(20, sched) == 1.0

    def test_warmup_step_schedule(self):
        sched = WarmupSchedule(start=7, end=7)
        assert warmup_weight(6, sched) == 0.0
        assert warmup_weight(7, sched) == 1.0

    def test_warmup_rejects_bad_schedule(self):
        with pytest.raises(ValueError):
            WarmupSchedule(start=5, end=3)


class TestMmd:
    def test_identical_samples_zero(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((30, 4))
        assert mmd(x, x, bandwidth=1.0) == 0.0

    def test_singleton_closed_form(self):
        x = np.array([[0.0, 0.0]])
        y = np.array([[1.0, 0.0]])
        expected = 2.0 * (1.0 - math.exp(-0.5))  # sigma = 1, distance 1
        assert abs(mmd(x, y, bandwidth=1.0) - expected) < 1e-12

    def test_monotone_in_separation(self):
        rng = np.random.default_rng(9)
        base = rng.standard_normal((60, 3))
        other = rng.standard_normal((60, 3))
        values = [
            mmd(base, other + np.array([shift, 0.0, 0.0]), bandwidth=2.0)
            for shift in (0.0, 1.0, 2.0, 4.0)
        ]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_empty_raises(self):
        with pytest.raises(EmptySampleError):
            mmd(np.zeros((0, 3)), np.zeros((5, 3)))

    def test_median_heuristic_positive(self):
        rng = np.random.default_rng(4)
        bw = median_heuristic_bandwidth(rng.standard_normal((10, 2)), rng.standard_normal((8, 2)))
        assert bw > 0
        # degenerate pooled sample falls back to 1.0
        assert median_heuristic_bandwidth(np.zeros((3, 2)), np.zeros((2, 2))) == 1.0

    def test_default_bandwidth_runs(self):
        rng = np.random.default_rng(6)
        value = mmd(rng.standard_normal((20, 3)), 1.0 + rng.standard_normal((25, 3)))
        assert value >= 0.0
