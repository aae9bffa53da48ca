import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from rlbranch.quadrature import (
    expconv, newton_cotes_weights, richardson, solve_renewal, trapezoid_convolution,
    trapezoid_weights, two_piece_integral,
)


@given(n=st.integers(min_value=2, max_value=60), c=st.lists(
    st.floats(-3, 3, allow_nan=False), min_size=4, max_size=4))
def test_newton_cotes_exact_on_cubics(n, c):
    h = 0.1
    x = h * np.arange(n + 1)
    p = c[0] + c[1] * x + c[2] * x ** 2 + c[3] * x ** 3
    X = x[-1]
    exact = c[0] * X + c[1] * X ** 2 / 2 + c[2] * X ** 3 / 3 + c[3] * X ** 4 / 4
    assert math.isclose(np.dot(newton_cotes_weights(n, h), p), exact, rel_tol=1e-10, abs_tol=1e-10)


@given(n=st.integers(min_value=1, max_value=200))
def test_weights_sum_to_length(n):
    assert math.isclose(newton_cotes_weights(n, 0.05).sum(), n * 0.05, rel_tol=1e-12)
    assert math.isclose(trapezoid_weights(n, 0.05).sum(), n * 0.05, rel_tol=1e-12)


@settings(max_examples=30)
@given(rate=st.floats(0.0, 5.0), h=st.sampled_from([0.01, 0.05, 0.1]))
def test_expconv_matches_direct_trapezoid(rate, h):
    x = h * np.arange(40)
    v = np.cos(x) + 2
    y = expconv(v, h, rate)
    for j in (0, 1, 7, 39):
        direct = np.dot(trapezoid_weights(j, h), v[: j + 1] * np.exp(-rate * (x[j] - x[: j + 1])))
        assert math.isclose(y[j], direct, rel_tol=1e-10, abs_tol=1e-13)


def test_richardson_lifts_order():
    def trap(n):
        x = np.linspace(0, 1, n + 1)
        return np.dot(trapezoid_weights(n, 1 / n), np.exp(x))
    err = abs(richardson(trap(200), trap(100)) - (math.e - 1))
    assert err < 1e-11


def test_renewal_exponential_kernel():
    # M = 1 + int_0^t M(t-s) 2 e^{-s} ds  ->  M(t) = 2 e^t - 1
    h = 0.005
    t = h * np.arange(801)
    M = solve_renewal(np.ones_like(t), 2 * np.exp(-t), h)
    assert np.max(np.abs(M / (2 * np.exp(t) - 1) - 1)) < 1e-4


def test_trapezoid_convolution():
    h = 0.01
    t = h * np.arange(301)
    c = trapezoid_convolution(np.ones_like(t), t, h)
    assert np.allclose(c, t ** 2 / 2, atol=1e-12)


def test_two_piece_integral_handles_jump():
    h = 0.01
    x = h * np.arange(501)
    dens = np.exp(-x)
    vals = np.where(x > 1.0, 1.0, 0.0)
    i = 100
    vals_left = vals.copy()
    exact = math.exp(-1) - math.exp(-5)
    assert math.isclose(two_piece_integral(vals_left, 1.0, i, dens, h), exact, rel_tol=1e-9)
