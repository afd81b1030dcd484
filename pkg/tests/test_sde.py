"""Reference-process presets: closed forms against independent scalar oracles
and against numeric quadrature.

Oracle values below were computed by hand / with exact arithmetic before the
preset implementations were written.
"""

import math

import numpy as np
import pytest

from gaussbridge import sde as sde_mod
from gaussbridge.errors import DegenerateHorizon, InvalidParams
from gaussbridge.sde import (
    PRESET_NAMES,
    bridge_scalars,
    effective_sigma,
    kernel,
    noise_integral,
    offset,
    preset,
    strip_closed_forms,
    transition,
)

# independent oracles
OU_KERNEL_05_08 = 0.2341432138238526   # e^{-0.8} sinh(0.5)
OU_ACC_1 = 3.194528049465325   # expm1(2) / 2
OU_EFF_VAR = 1.1752011936438014  # sinh(1)
OU_OFFSET_1 = 0.6321205588285577  # 1 - 1/e
VESDE_G0 = 0.24477468306808161   # 0.1 * sqrt(2 ln 20)
VESDE_ACC_1 = 3.99               # sigma(T)^2 - sigma_min^2


def _all_presets():
    return [
        preset("bm", nu=1.0),
        preset("vesde", sigma_min=0.1, sigma_max=2.0),
        preset("vpsde", beta_min=0.1, beta_max=20.0),
        preset("sub_vpsde", beta_min=0.1, beta_max=4.0),
        preset("ou", delta=1.0, nu=1.0, shift=0.5),
        preset("bdt", nu=1.0, shift=0.3),
    ]


class TestBm:
    def test_scalars(self):
        s = preset("bm", nu=2.0)
        assert transition(s, 0.6) == 1.0
        assert abs(noise_integral(s, 0.6) - 4.0 * 0.6) < 1e-14
        assert abs(kernel(s, 0.25, 0.75) - 4.0 * 0.25) < 1e-14
        assert abs(effective_sigma(s) - 2.0) < 1e-14

    def test_small_nu_still_solvable(self):
        s = preset("bm", nu=1e-6)
        assert abs(effective_sigma(s) - 1e-6) < 1e-18

    def test_zero_noise_degenerate(self):
        s = preset("bm", nu=1e-8)
        with pytest.raises(DegenerateHorizon):
            effective_sigma(s)


class TestVesde:
    def test_vol_at_zero(self):
        s = preset("vesde", sigma_min=0.1, sigma_max=2.0)
        assert abs(s.vol(0.0) - VESDE_G0) < 1e-12

    def test_accumulated_noise_exact(self):
        s = preset("vesde", sigma_min=0.1, sigma_max=2.0)
        assert abs(noise_integral(s, 1.0) - VESDE_ACC_1) < 1e-12
        assert abs(kernel(s, 1.0, 1.0) - VESDE_ACC_1) < 1e-12
        # interior value: sigma_t^2 - sigma_min^2
        t = 0.37
        sig_t = 0.1 * (20.0**t)
        assert abs(noise_integral(s, t) - (sig_t**2 - 0.01)) < 1e-12

    def test_transition_is_identity(self):
        s = preset("vesde")
        assert transition(s, 0.73) == 1.0


class TestVpsde:
    def test_transition_and_noise(self):
        s = preset("vpsde", beta_min=0.1, beta_max=20.0)
        b_total = 0.1 + (20.0 - 0.1) / 2.0
        assert abs(transition(s, 1.0) - math.exp(-0.5 * b_total)) < 1e-12
        assert abs(noise_integral(s, 1.0) - math.expm1(b_total)) < 1e-6 * math.expm1(b_total)

    def test_effective_sigma(self):
        s = preset("vpsde", beta_min=0.1, beta_max=20.0)
        b_total = 10.05
        # K(T,T)/zeta_T = zeta_T * I(T) = e^{-B/2}(e^B - 1) = 2 sinh(B/2)
        assert abs(effective_sigma(s) ** 2 - 2.0 * math.sinh(0.5 * b_total)) < 1e-8


class TestSubVpsde:
    def test_noise_integral_form(self):
        s = preset("sub_vpsde", beta_min=0.1, beta_max=4.0)
        t = 0.8
        b = 0.1 * t + (4.0 - 0.1) * t * t / 2.0
        want = (math.exp(0.5 * b) - math.exp(-0.5 * b)) ** 2
        assert abs(noise_integral(s, t) - want) < 1e-10

    def test_vol_nonnegative(self):
        s = preset("sub_vpsde")
        for t in np.linspace(0.0, 1.0, 7):
            assert s.vol(float(t)) >= 0.0


class TestOu:
    def test_kernel_gold(self):
        s = preset("ou", delta=1.0, nu=1.0)
        assert abs(kernel(s, 0.5, 0.8) - OU_KERNEL_05_08) < 5e-8

    def test_noise_integral(self):
        s = preset("ou", delta=1.0, nu=1.0)
        assert abs(noise_integral(s, 1.0) - OU_ACC_1) < 1e-12

    def test_effective_sigma(self):
        s = preset("ou", delta=1.0, nu=1.0)
        assert abs(effective_sigma(s) ** 2 - OU_EFF_VAR) < 1e-12

    def test_offset_with_shift(self):
        s = preset("ou", delta=1.0, nu=1.0, shift=1.0)
        np.testing.assert_allclose(offset(s, 1.0, 1), [OU_OFFSET_1], atol=1e-12)

    def test_negative_delta_repulsive(self):
        # delta < 0 flips mean reversion into repulsion: transition grows,
        # yet sinh(delta T)/delta keeps the coupling noise scale positive
        s = preset("ou", delta=-2.0, nu=1.0)
        assert transition(s, 1.0) == pytest.approx(math.exp(2.0), rel=1e-12)
        assert effective_sigma(s) > 0.0

    def test_zero_delta_rejected(self):
        with pytest.raises(InvalidParams):
            preset("ou", delta=0.0)


class TestBdt:
    def test_constant_shift_offset_linear(self):
        s = preset("bdt", nu=1.0, shift=0.7)
        np.testing.assert_allclose(offset(s, 0.4, 1), [0.7 * 0.4], atol=1e-14)

    def test_vector_shift(self):
        s = preset("bdt", nu=1.0, shift=np.array([1.0, -2.0]))
        np.testing.assert_allclose(offset(s, 0.5, 2), [0.5, -1.0], atol=1e-14)

    def test_matches_bm_when_shift_zero(self):
        a = preset("bdt", nu=1.5, shift=0.0)
        b = preset("bm", nu=1.5)
        for t in (0.2, 0.9):
            assert abs(noise_integral(a, t) - noise_integral(b, t)) < 1e-14


class TestClosedVsQuadrature:
    @pytest.mark.parametrize("idx", range(6))
    def test_closed_forms_match_quadrature(self, idx):
        s = _all_presets()[idx]
        bare = strip_closed_forms(s)
        for t in (0.15, 0.5, 0.95):
            zc, zq = transition(s, t), transition(bare, t)
            assert abs(zc - zq) <= 1e-9 * max(1.0, abs(zc))
            ic, iq = noise_integral(s, t), noise_integral(bare, t)
            assert abs(ic - iq) <= 1e-8 * max(1.0, abs(ic))
            oc = offset(s, t, 1)
            oq = offset(bare, t, 1)
            np.testing.assert_allclose(oc, oq, atol=1e-9, rtol=1e-9)


class TestScalarBundle:
    def test_kernel_symmetry(self):
        for s in _all_presets():
            assert abs(kernel(s, 0.3, 0.7) - kernel(s, 0.7, 0.3)) < 1e-12

    def test_boundary_weights(self):
        for s in _all_presets():
            sc0 = bridge_scalars(s, 0.0, 1)
            scT = bridge_scalars(s, s.horizon, 1)
            assert sc0.weight_end == 0.0
            assert sc0.noise_fraction == 0.0
            assert scT.weight_end == 1.0
            assert scT.noise_fraction == 1.0
            assert scT.weight_start == 0.0

    def test_derivative_identities_fd(self):
        # analytic d(weight)/dt against central differences
        h = 1e-7
        for s in _all_presets():
            for t in (0.3, 0.6):
                sc = bridge_scalars(s, t, 1)
                fd_end = (
                    bridge_scalars(s, t + h, 1).weight_end
                    - bridge_scalars(s, t - h, 1).weight_end
                ) / (2 * h)
                fd_start = (
                    bridge_scalars(s, t + h, 1).weight_start
                    - bridge_scalars(s, t - h, 1).weight_start
                ) / (2 * h)
                scale = max(1.0, abs(sc.d_weight_end), abs(sc.d_weight_start))
                assert abs(sc.d_weight_end - fd_end) < 5e-5 * scale
                assert abs(sc.d_weight_start - fd_start) < 5e-5 * scale

    def test_offset_derivative_fd(self):
        s = preset("ou", delta=1.0, nu=1.0, shift=2.0)
        h = 1e-7
        t = 0.4
        sc = bridge_scalars(s, t, 1)
        fd = (offset(s, t + h, 1) - offset(s, t - h, 1)) / (2 * h)
        np.testing.assert_allclose(sc.d_offset, fd, atol=1e-5)


class TestPresetFactory:
    def test_names(self):
        assert set(PRESET_NAMES) == {"bm", "vesde", "vpsde", "sub_vpsde", "ou", "bdt"}

    def test_unknown_name(self):
        with pytest.raises(InvalidParams):
            preset("geometric")

    def test_unknown_param(self):
        with pytest.raises(InvalidParams):
            preset("bm", mu=3.0)

    def test_bad_values(self):
        with pytest.raises(InvalidParams):
            preset("bm", nu=-1.0)
        with pytest.raises(InvalidParams):
            preset("vesde", sigma_min=2.0, sigma_max=0.1)
        with pytest.raises(InvalidParams):
            preset("bm", horizon=0.0)

    def test_params_echo(self):
        s = preset("vesde", sigma_min=0.2, sigma_max=1.0)
        assert s.name == "vesde"
        assert s.params["sigma_min"] == 0.2
