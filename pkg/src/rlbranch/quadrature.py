"""Uniform-grid quadrature helpers shared by the deterministic solvers.

Everything here works on equally spaced nodes ``x_j = j * step``.  Scalar
functionals are computed on a refined pair of grids (step ``d`` and ``2d``)
and combined by one Richardson step, which lifts the composite trapezoid
rule from second to fourth order for smooth integrands.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.signal import lfilter

#: Refinement factor between the renewal step ``h`` and the fine lifetime grid.
REFINE = 8


def trapezoid_weights(n: int, step: float) -> np.ndarray:
    """Composite trapezoid weights for ``n`` intervals (``n + 1`` nodes)."""
    if n <= 0:
        return np.zeros(1)
    w = np.full(n + 1, step)
    w[0] = w[-1] = 0.5 * step
    return w


def newton_cotes_weights(n: int, step: float) -> np.ndarray:
    """Closed composite Simpson weights on ``n`` intervals.

    Odd ``n >= 3`` finishes with a 3/8 panel on the last three intervals;
    ``n == 1`` falls back to the trapezoid rule.
    """
    if n <= 0:
        return np.zeros(1)
    if n == 1:
        return np.array([0.5 * step, 0.5 * step])
    w = np.zeros(n + 1)
    m = n if n % 2 == 0 else n - 3
    if m > 0:
        w[: m + 1] = 2.0 * step / 3.0
        w[1:m:2] = 4.0 * step / 3.0
        w[0] = w[m] = step / 3.0
    if m != n:
        c = 3.0 * step / 8.0
        w[m] += c
        w[m + 1] += 3 * c
        w[m + 2] += 3 * c
        w[m + 3] += c
    return w


def richardson(fine, coarse):
    """Combine estimates on steps ``d`` and ``2d`` (error ~ d**2)."""
    fine = np.asarray(fine)
    if fine.ndim:
        fine = fine[..., ::2]
    return (4.0 * fine - np.asarray(coarse)) / 3.0


def cumtrapz(values: np.ndarray, step: float) -> np.ndarray:
    return cumulative_trapezoid(values, dx=step, initial=0.0)


def expconv(values: np.ndarray, step: float, rate: float) -> np.ndarray:
    """Trapezoid values of ``y(x_j) = int_0^{x_j} v(u) exp(-rate (x_j - u)) du``.

    Evaluated by the first-order recursion
    ``y_j = e^{-rate*step} y_{j-1} + step/2 (v_j + e^{-rate*step} v_{j-1})``.
    """
    values = np.asarray(values, dtype=float)
    d = math.exp(-rate * step)
    y = lfilter([0.5 * step, 0.5 * step * d], [1.0, -d], values)
    # lfilter starts from y_0 = step/2 * v_0; the exact start is 0
    y -= 0.5 * step * values[0] * d ** np.arange(values.size)
    return y


def trapezoid_convolution(a: np.ndarray, b: np.ndarray, step: float) -> np.ndarray:
    """``c_i = int_0^{t_i} a(s) b(t_i - s) ds`` by the trapezoid rule on each prefix."""
    n = len(a)
    full = np.convolve(a, b)[:n]
    c = full - 0.5 * (a[0] * b + a * b[0])
    c[0] = 0.0
    return step * c


def solve_renewal(forcing: np.ndarray, kernel: np.ndarray, step: float) -> np.ndarray:
    """Solve ``M(t) = z(t) + int_0^t M(t - s) k(s) ds`` on a uniform grid.

    Forward substitution with trapezoid weights; the ``s = 0`` endpoint is
    kept implicit so every step is a scalar linear solve.
    """
    z = np.asarray(forcing, dtype=float)
    k = np.asarray(kernel, dtype=float)
    n = len(z)
    m = np.empty(n)
    m[0] = z[0]
    denom = 1.0 - 0.5 * step * k[0]
    if denom <= 0:
        raise ValueError("renewal step too coarse for kernel: 1 - h*k(0)/2 <= 0")
    for i in range(1, n):
        acc = 0.5 * k[i] * m[0]
        if i > 1:
            acc += np.dot(k[1:i], m[i - 1:0:-1])
        m[i] = (z[i] + step * acc) / denom
    return m


def two_piece_integral(values: np.ndarray, right_value: np.ndarray, i: int,
                       dens: np.ndarray, step: float) -> np.ndarray:
    """Integrate ``values * dens`` over the grid with a jump at node ``i``.

    ``values[..., i]`` is the left limit; ``right_value`` replaces it for the
    piece ``[x_i, x_max]``.  Each piece uses closed Newton-Cotes weights, so
    the moving discontinuity costs no order.  Works row-wise on 2-D input.
    """
    n = dens.size - 1
    i = min(i, n)
    wl = newton_cotes_weights(i, step) * dens[: i + 1]
    total = values[..., : i + 1] @ wl
    if i < n:
        wr = newton_cotes_weights(n - i, step) * dens[i:]
        right = values[..., i:].copy()
        right[..., 0] = right_value
        total = total + right @ wr
    return total


def piece_weights(i: int, dens: np.ndarray, step: float) -> float:
    """Total mass that :func:`two_piece_integral` assigns to ``dens`` at jump ``i``."""
    one = np.ones(dens.size)
    return float(two_piece_integral(one, 1.0, i, dens, step))
