"""Bridge solver: golden scalar fixture, boundary exactness, drift symmetry,
covariance-ODE consistency, and conditional pinning.

Golden values are the 1-d unit fixture solved by hand: with unit noise over a
unit horizon between standard normals, the cross-covariance is the golden
ratio minus one, and everything else follows in closed form.
"""

import numpy as np
import pytest

from conftest import rand_spd
from gaussbridge import (
    Gaussian,
    GsbProblem,
    as_psd,
    bridge_given_end,
    bridge_given_start,
    drift,
    drift_matrix,
    marginal,
    preset,
    solve,
    validate,
)
from gaussbridge.errors import (
    DimensionMismatch,
    DimensionTooLarge,
    TimeOutOfRange,
)

GOLD_CROSS = 0.6180339887498949
GOLD_VAR_HALF = 1.0590169943749475
GOLD_DRIFT_AT_1 = -0.4721359549995794
GOLD_BRIDGE_MEAN = 0.8090169943749475
GOLD_BRIDGE_VAR = 0.4045084971874737


@pytest.fixture
def unit_sol():
    sde = preset("bm", nu=1.0)
    g = Gaussian(np.zeros(1), np.eye(1))
    return solve(GsbProblem(sde=sde, start=g, end=g))


class TestGoldenFixture:
    def test_effective_sigma(self, unit_sol):
        assert abs(unit_sol.sigma - 1.0) < 1e-14

    def test_cross_cov(self, unit_sol):
        assert abs(unit_sol.cross[0, 0] - GOLD_CROSS) < 1e-9

    def test_marginal_var_half(self, unit_sol):
        m = marginal(unit_sol, 0.5)
        assert abs(m.cov.entries[0, 0] - GOLD_VAR_HALF) < 1e-9
        assert abs(m.mean[0]) < 1e-14

    def test_drift_at_half(self, unit_sol):
        A, b = drift_matrix(unit_sol, 0.5)
        assert abs((A[0, 0] + b[0]) - GOLD_DRIFT_AT_1) < 1e-9
        val = drift(unit_sol, 0.5, np.array([1.0]))
        assert abs(val[0] - GOLD_DRIFT_AT_1) < 1e-9

    def test_bridge_given_start(self, unit_sol):
        br = bridge_given_start(unit_sol, 0.5, np.array([1.0]))
        assert abs(br.mean[0] - GOLD_BRIDGE_MEAN) < 1e-9
        assert abs(br.cov.entries[0, 0] - GOLD_BRIDGE_VAR) < 1e-9


def _random_problem(rng, name, d, scale=1.0, **params):
    sde = preset(name, **params)
    start = Gaussian(rng.normal(size=d) * scale, as_psd(rand_spd(rng, d, scale**2)))
    end = Gaussian(rng.normal(size=d) * scale, as_psd(rand_spd(rng, d, scale**2)))
    return solve(GsbProblem(sde=sde, start=start, end=end))


PRESET_ARGS = [
    ("bm", {"nu": 1.0}),
    ("vesde", {}),
    ("vpsde", {}),
    ("sub_vpsde", {}),
    ("ou", {"delta": 1.0, "shift": 0.4}),
    ("bdt", {"shift": -0.2}),
]


class TestBoundaries:
    @pytest.mark.parametrize("name,params", PRESET_ARGS)
    def test_boundary_bit_exact(self, rng, name, params):
        for d in (1, 3, 8):
            sol = _random_problem(rng, name, d, **params)
            m0 = marginal(sol, 0.0)
            mT = marginal(sol, sol.sde.horizon)
            np.testing.assert_array_equal(m0.mean, sol.start.mean)
            np.testing.assert_array_equal(m0.cov.entries, sol.start.cov.entries)
            np.testing.assert_array_equal(mT.mean, sol.end.mean)
            np.testing.assert_array_equal(mT.cov.entries, sol.end.cov.entries)


class TestDriftMatrix:
    @pytest.mark.parametrize("name,params", PRESET_ARGS)
    def test_symmetry(self, rng, name, params):
        sol = _random_problem(rng, name, 4, **params)
        T = sol.sde.horizon
        for t in np.linspace(0.02, 0.98, 12) * T:
            A, _ = drift_matrix(sol, float(t))
            denom = 1.0 + np.abs(A).max()
            assert np.abs(A - A.T).max() / denom < 1e-8

    def test_time_domain(self, unit_sol):
        with pytest.raises(TimeOutOfRange):
            drift_matrix(unit_sol, 0.0)
        with pytest.raises(TimeOutOfRange):
            drift_matrix(unit_sol, 1.0)
        with pytest.raises(TimeOutOfRange):
            drift_matrix(unit_sol, -0.2)

    def test_drift_shapes(self, rng, unit_sol):
        single = drift(unit_sol, 0.3, np.array([0.5]))
        batch = drift(unit_sol, 0.3, rng.normal(size=(7, 1)))
        assert single.shape == (1,)
        assert batch.shape == (7, 1)


class TestMarginalConsistency:
    def test_mixture_of_start_pins_reproduces_marginal(self, rng):
        """Integrating the start-pinned bridge over the start Gaussian must
        reproduce the unconditional marginal (law of total mean/variance)."""
        sol = _random_problem(rng, "ou", 3, delta=0.8, shift=0.3)
        T = sol.sde.horizon
        for t in (0.2 * T, 0.61 * T):
            sc = sol.scalars(float(t))
            mix_map = sc.weight_start * np.eye(3) + sc.weight_end * sol.end_gain.T
            base = bridge_given_start(sol, float(t), sol.start.mean)
            mix_cov = (
                mix_map @ sol.start.cov.entries @ mix_map.T + base.cov.entries
            )
            m = marginal(sol, float(t))
            np.testing.assert_allclose(m.cov.entries, mix_cov, atol=1e-10)
            np.testing.assert_allclose(m.mean, base.mean, atol=1e-10)

    def test_mixture_of_end_pins_reproduces_marginal(self, rng):
        sol = _random_problem(rng, "vesde", 2)
        t = 0.37
        sc = sol.scalars(t)
        mix_map = sc.weight_end * np.eye(2) + sc.weight_start * sol.start_gain.T
        base = bridge_given_end(sol, t, sol.end.mean)
        mix_cov = mix_map @ sol.end.cov.entries @ mix_map.T + base.cov.entries
        m = marginal(sol, t)
        np.testing.assert_allclose(m.cov.entries, mix_cov, atol=1e-10)
        np.testing.assert_allclose(m.mean, base.mean, atol=1e-10)


class TestBridgePinning:
    def test_start_pin_collapse(self, unit_sol):
        x0 = np.array([1.7])
        br = bridge_given_start(unit_sol, 0.0, x0)
        np.testing.assert_allclose(br.mean, x0, atol=1e-12)
        assert br.cov.entries[0, 0] < 1e-12

    def test_end_pin_collapse(self, unit_sol):
        xT = np.array([-0.9])
        br = bridge_given_end(unit_sol, 1.0, xT)
        np.testing.assert_allclose(br.mean, xT, atol=1e-12)
        assert br.cov.entries[0, 0] < 1e-12

    def test_start_pin_at_horizon_is_coupling_conditional(self, unit_sol):
        # at t = T the start-pinned law equals the static coupling conditional
        x0 = np.array([2.0])
        br = bridge_given_start(unit_sol, 1.0, x0)
        np.testing.assert_allclose(br.mean, [GOLD_CROSS * 2.0], atol=1e-9)
        np.testing.assert_allclose(
            br.cov.entries, [[1.0 - GOLD_CROSS**2]], atol=1e-9
        )

    def test_wrong_shape(self, unit_sol):
        with pytest.raises(DimensionMismatch):
            bridge_given_start(unit_sol, 0.5, np.zeros(2))


class TestValidationReport:
    def test_passes_on_sane_problem(self, rng):
        sol = _random_problem(rng, "vpsde", 2)
        report = validate(sol)
        assert report.passed
        d = report.to_dict()
        assert d["passed"] is True
        assert len(d["rows"]) > 0
        text = report.format_text()
        assert "drift asymmetry" in text
        assert "PASS" in text

    def test_covariance_ode_residual_small(self, rng):
        for name, params in PRESET_ARGS:
            sol = _random_problem(rng, name, 3, **params)
            report = validate(sol, n_grid=10)
            worst = max(row.cov_ode_residual for row in report.rows)
            assert worst <= 1e-4, f"{name}: residual {worst}"

    def test_scaled_problem_still_passes(self, rng):
        sol = _random_problem(rng, "vesde", 3, scale=20.0)
        assert validate(sol).passed


class TestProblemValidation:
    def test_dim_cap(self, rng):
        sde = preset("bm")
        g = Gaussian(np.zeros(65), np.eye(65))
        with pytest.raises(DimensionTooLarge):
            GsbProblem(sde=sde, start=g, end=g)

    def test_dim_mismatch(self):
        sde = preset("bm")
        with pytest.raises(DimensionMismatch):
            GsbProblem(
                sde=sde,
                start=Gaussian(np.zeros(2), np.eye(2)),
                end=Gaussian(np.zeros(3), np.eye(3)),
            )
