"""Entropic transport metric and moment estimation."""

import numpy as np
import pytest

from gaussbridge.errors import DimensionMismatch, InvalidParams, TooFewPoints
from gaussbridge.metrics import (
    SinkhornConfig,
    SinkhornResult,
    estimate_moments,
    pairwise_sq_dists,
    sinkhorn_weps,
)


class TestPairwiseSqDists:
    def test_small_oracle(self):
        x = np.array([[0.0, 0.0], [1.0, 0.0]])
        y = np.array([[0.0, 1.0], [3.0, 4.0]])
        want = np.array([[1.0, 25.0], [2.0, 20.0]])
        np.testing.assert_allclose(pairwise_sq_dists(x, y), want, atol=1e-12)

    def test_self_diagonal_zero(self, rng):
        x = rng.normal(size=(40, 3))
        d = pairwise_sq_dists(x, x)
        np.testing.assert_allclose(np.diag(d), 0.0, atol=1e-10)
        assert d.min() >= 0.0

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            pairwise_sq_dists(np.zeros((3, 2)), np.zeros((3, 4)))


class TestSinkhornWeps:
    def test_forced_pair_any_epsilon(self):
        # single atoms: the plan is the unique coupling, value is just the cost
        x = np.array([[0.0, 0.0]])
        y = np.array([[3.0, 4.0]])
        for eps in (0.01, 1.0, 100.0):
            res = sinkhorn_weps(x, y, SinkhornConfig(epsilon=eps))
            assert res.value == pytest.approx(25.0, rel=1e-10)
            assert res.converged

    def test_identical_clouds_near_zero(self, rng):
        x = rng.normal(size=(60, 2))
        res = sinkhorn_weps(x, x, SinkhornConfig(epsilon=0.01))
        assert 0.0 <= res.value < 0.05

    def test_default_epsilon_rule(self, rng):
        x = rng.normal(size=(30, 2))
        y = rng.normal(size=(30, 2)) + 1.0
        res = sinkhorn_weps(x, y)
        want = 0.05 * float(pairwise_sq_dists(x, y).mean())
        assert res.epsilon == pytest.approx(want, rel=1e-12)

    def test_shifted_clouds_track_sq_distance(self, rng):
        x = rng.normal(size=(400, 2)) * 0.05
        y = x + np.array([2.0, 0.0])
        res = sinkhorn_weps(x, y, SinkhornConfig(epsilon=0.05))
        # squared distance cost: shift of 2 contributes 4
        assert res.value == pytest.approx(4.0, abs=0.1)

    def test_result_dict(self, rng):
        x = rng.normal(size=(20, 2))
        res = sinkhorn_weps(x, x, SinkhornConfig(epsilon=0.5))
        d = res.to_dict()
        assert d["metric"] == "entropic_w2sq"
        assert set(d) == {"metric", "value", "epsilon", "iters", "converged", "marginal_error"}
        assert isinstance(res, SinkhornResult)

    def test_config_validation(self):
        with pytest.raises(InvalidParams):
            SinkhornConfig(epsilon=-1.0)
        with pytest.raises(InvalidParams):
            SinkhornConfig(max_iters=0)
        with pytest.raises(InvalidParams):
            SinkhornConfig(tol=0.0)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            sinkhorn_weps(np.zeros((3, 2)), np.zeros((4, 3)))


class TestEstimateMoments:
    def test_three_point_oracle(self):
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0]])
        g = estimate_moments(pts, shrinkage=0.0)
        np.testing.assert_allclose(g.mean, [1.0, 1.0 / 3.0], atol=1e-14)
        want_cov = np.cov(pts.T, ddof=1)
        np.testing.assert_allclose(g.cov.entries, want_cov, atol=1e-14)

    def test_shrinkage_formula(self, rng):
        pts = rng.normal(size=(50, 3)) @ np.diag([1.0, 2.0, 0.5])
        raw = np.cov(pts.T, ddof=1)
        s = 0.2
        g = estimate_moments(pts, shrinkage=s)
        want = (1 - s) * raw + s * (np.trace(raw) / 3) * np.eye(3)
        np.testing.assert_allclose(g.cov.entries, 0.5 * (want + want.T), atol=1e-12)

    def test_full_shrinkage_is_isotropic(self, rng):
        pts = rng.normal(size=(50, 2)) @ np.array([[3.0, 0.0], [0.0, 0.1]])
        g = estimate_moments(pts, shrinkage=1.0)
        assert g.cov.entries[0, 0] == pytest.approx(g.cov.entries[1, 1], rel=1e-12)
        assert g.cov.entries[0, 1] == pytest.approx(0.0, abs=1e-15)

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            estimate_moments(np.zeros((1, 2)))

    def test_bad_shrinkage(self, rng):
        with pytest.raises(InvalidParams):
            estimate_moments(rng.normal(size=(5, 2)), shrinkage=1.5)
