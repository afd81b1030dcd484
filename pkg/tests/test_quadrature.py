import numpy as np
import pytest

from gaussbridge.errors import InvalidParams, QuadratureFailure
from gaussbridge.quadrature import integrate


def test_polynomial_exact():
    val = integrate(lambda t: t * t, 0.0, 1.0)
    assert abs(val - 1.0 / 3.0) < 1e-12


def test_sine_over_half_period():
    val = integrate(np.sin, 0.0, np.pi)
    assert abs(val - 2.0) < 1e-10


def test_sharp_exponential():
    val = integrate(lambda t: np.exp(-50.0 * t), 0.0, 2.0, tol=1e-12)
    assert abs(val - (1.0 - np.exp(-100.0)) / 50.0) < 1e-11


def test_vector_valued_integrand():
    val = integrate(lambda t: np.array([1.0, 2.0 * t, 3.0 * t * t]), 0.0, 1.0)
    np.testing.assert_allclose(val, [1.0, 1.0, 1.0], atol=1e-10)


def test_zero_width_interval():
    assert integrate(lambda t: t, 0.5, 0.5) == 0.0
    vec = integrate(lambda t: np.array([t, t]), 0.25, 0.25)
    np.testing.assert_array_equal(vec, [0.0, 0.0])


def test_reversed_bounds_flip_sign():
    fwd = integrate(lambda t: t, 0.0, 2.0)
    rev = integrate(lambda t: t, 2.0, 0.0)
    assert abs(fwd + rev) < 1e-12


def test_depth_exhaustion():
    # a nowhere-smooth-enough integrand that adaptive bisection cannot settle
    def needle(t):
        return 1.0 if abs(t - np.e / 10.0) < 1e-13 else np.sign(np.sin(1.0 / (abs(t - np.e / 10.0) + 1e-300)))

    with pytest.raises(QuadratureFailure):
        integrate(needle, 0.0, 1.0, tol=1e-14, max_depth=6)


def test_invalid_params():
    with pytest.raises(InvalidParams):
        integrate(lambda t: t, 0.0, np.inf)
    with pytest.raises(InvalidParams):
        integrate(lambda t: t, 0.0, 1.0, tol=0.0)
