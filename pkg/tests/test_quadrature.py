import math

import numpy as np
import pytest
from scipy import integrate as sci

from lyapcert.quadrature import QuadratureError, gk15, integrate, integrate_panels, integrate_to_infinity


@pytest.mark.parametrize("degree", range(0, 22))
def test_gk15_exact_on_polynomials(degree):
    value, _ = gk15(lambda x: x ** degree, 0.0, 1.0)
    assert value == pytest.approx(1.0 / (degree + 1), rel=1e-14)


def test_weights_sum_to_interval_length():
    value, err = gk15(np.ones_like, -2.0, 3.0)
    assert value == pytest.approx(5.0, rel=1e-15)
    assert err < 1e-13


@pytest.mark.parametrize("f, a, b", [
    (np.sin, 0.0, 10.0),
    (lambda x: np.exp(-x ** 2), -3.0, 3.0),
    (np.sqrt, 0.0, 1.0),                       # endpoint singularity in the derivative
    (lambda x: 1.0 / (1e-3 + x ** 2), -1.0, 1.0),  # sharp peak
    (lambda x: np.abs(x - 0.3), 0.0, 1.0),     # kink inside a panel
])
def test_matches_scipy_quad(f, a, b):
    value, err = integrate(f, a, b, 1e-12, 1e-12)
    ref, _ = sci.quad(lambda x: float(f(np.array([x]))[0]), a, b, epsabs=1e-13, epsrel=1e-13, limit=500)
    assert abs(value - ref) <= max(1e-10, 1e-10 * abs(ref))
    assert err <= max(1e-10, 1e-10 * abs(ref))


def test_error_estimate_bounds_true_error():
    for k in range(1, 8):
        value, err = integrate(lambda x: np.cos(k * x) * np.exp(x), 0.0, 4.0, 1e-9, 1e-9)
        exact = (np.exp(4) * (np.cos(4 * k) + k * np.sin(4 * k)) - 1) / (1 + k * k)
        assert abs(value - exact) <= err + 1e-14


def test_panels_are_summed():
    value, _ = integrate_panels(lambda x: x, [0.0, 1.0, 2.0, 4.0])
    assert value == pytest.approx(8.0, rel=1e-15)


def test_semi_infinite():
    value, err = integrate_to_infinity(lambda t: np.exp(-t), 0.0)
    assert value == pytest.approx(1.0, abs=1e-12)
    value, _ = integrate_to_infinity(lambda t: 2 * np.exp(-2 * t), 5.0)
    assert value == pytest.approx(math.exp(-10), rel=1e-9)
    value, _ = integrate_to_infinity(lambda t: 1 / (1 + t) ** 2, 0.0)
    assert value == pytest.approx(1.0, rel=1e-10)


def test_non_finite_integrand_raises():
    with pytest.raises(QuadratureError):
        integrate(lambda x: np.where(x > 0.5, np.nan, x), 0.0, 1.0)
