"""Generating maps, extinction probability, Laplace-functional march and the limit law.

The nonlinear evolution for ``u_t(x) = u_t(theta f)(x)`` is solved along the
characteristics ``x - t = const`` of the lifetime grid.  We store
``S = exp(-u)`` instead of ``u`` so that the extinction curve (``theta f``
replaced by +infinity on ``x > 0``) runs through the same code with ``S = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, TestFunction
from .quadrature import cumtrapz, richardson, trapezoid_weights, two_piece_integral
from .renewal import LimitFunctionals, MalthusianSolution, RenewalGrid, limit_functionals

__all__ = [
    "ExtinctionResult", "LaplaceMarch", "PhiCurve", "ConvergenceError",
    "offspring_total_gf", "extinction_prob", "extinction_curve", "laplace_march",
    "phi_limit", "laplace_Y", "psi_fun", "default_theta_grid",
]

_EPS_TOP = 1e-12


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# generating maps of the total offspring


def _gf_on_grid(spec: ModelSpec, grid, s: float, mode: str) -> float:
    if mode == "compound":
        integrand = grid.alpha * (spec.offspring.g(grid.x, s) - 1.0)
    elif mode == "poisson":
        integrand = (s - 1.0) * grid.kappa
    else:
        raise ValueError(f"mode must be 'poisson' or 'compound', got {mode!r}")
    expo = np.exp(cumtrapz(integrand, grid.step))
    w = trapezoid_weights(grid.n, grid.step) * grid.dens
    return float(np.dot(w, expo) / w.sum())


def offspring_total_gf(spec: ModelSpec, s: float, mode: str = "compound") -> float:
    """Generating function of the ancestor's total offspring.

    ``compound``: int exp{int_0^x alpha(r)[g(r, s) - 1] dr} G(dx), the law of
    a compound Poisson count.  ``poisson``: int exp{(s - 1) Lambda(x)} G(dx), the
    pure Poisson form with Lambda(x) = int_0^x alpha(r) gp1(r) dr.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    d = spec.disc
    return float(richardson(_gf_on_grid(spec, d.fine, s, mode),
                            _gf_on_grid(spec, d.coarse, s, mode)))


def _smallest_fixed_point(fn, tol: float, max_iter: int) -> float:
    """Smallest root of fn(s) = s on [0, 1) for a convex generating map, else 1."""
    scan = np.concatenate([np.linspace(0.0, 0.99, 100), 1.0 - 10.0 ** -np.arange(3, 13)])
    prev = 0.0
    if fn(0.0) <= 0.0:
        return 0.0
    for s in scan[1:]:
        if fn(s) - s < 0.0:
            lo, hi = prev, s
            break
        prev = s
    else:
        return 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if fn(mid) - mid >= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 0.1 * tol:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ExtinctionResult:
    q: float
    q_poisson: float
    fixed_point_residual: float
    q_curve: RenewalGrid | None = None

    def to_dict(self):
        out = {"q": self.q, "q_poisson": self.q_poisson,
               "fixed_point_residual": self.fixed_point_residual}
        if self.q_curve is not None:
            out["q_T"] = float(self.q_curve["q_t"][-1])
        return out


def extinction_prob(spec: ModelSpec) -> ExtinctionResult:
    from .model import mean_total_offspring

    num = spec.numerics
    m = mean_total_offspring(spec)
    if m <= 1.0:
        return ExtinctionResult(q=1.0, q_poisson=1.0, fixed_point_residual=0.0)
    b4 = lambda s: offspring_total_gf(spec, s, "compound")  # noqa: E731
    hp = lambda s: offspring_total_gf(spec, s, "poisson")  # noqa: E731
    q = _smallest_fixed_point(b4, num.tol, num.max_iter)
    qp = _smallest_fixed_point(hp, num.tol, num.max_iter)
    return ExtinctionResult(q=q, q_poisson=qp, fixed_point_residual=abs(b4(q) - q))


# ---------------------------------------------------------------------------
# characteristic march for exp(-u_t)


def _march(spec: ModelSpec, S0: np.ndarray, jump: np.ndarray, n_steps: int, keep=False):
    """March S_i = exp(-u_{t_i}) on the node grid for several inputs at once.

    ``S0`` has shape (k, nx + 1) with S0[:, 0] = 1 (boundary value u = 0);
    ``jump`` (k,) is exp(-theta f(0+)), the factor between the left and right
    limits of S_i at x = t_i.  Returns L (k, n_steps + 1) and optionally all S_i.
    """
    node = spec.disc.node
    h = node.step
    off = spec.offspring
    alpha = node.alpha
    x = node.x
    k = S0.shape[0]
    L = np.empty((k, n_steps + 1))
    ones = np.ones(node.n + 1)

    def integrate(S, i):
        norm = two_piece_integral(ones, 1.0, i, node.dens, h)
        right = S[:, min(i, node.n)] * jump if i < node.n else 0.0
        return two_piece_integral(S, right, i, node.dens, h) / norm

    def rate(cols, Lv):
        # alpha(y) [1 - g(y, L)] on the requested columns
        return alpha[cols] * (1.0 - off.g(x[cols][None, :], Lv[:, None]))

    head = slice(0, node.n)
    tail = slice(1, node.n + 1)
    S = S0.astype(float).copy()
    L[:, 0] = integrate(S, 0)
    history = [S.copy()] if keep else None
    for i in range(1, n_steps + 1):
        base = S[:, :-1] * np.exp(-0.5 * h * rate(head, L[:, i - 1]))
        Lg = L[:, i - 1] if i == 1 else np.clip(2.0 * L[:, i - 1] - L[:, i - 2], 0.0, 1.0)
        for it in range(11):
            Sn = np.empty_like(S)
            Sn[:, 0] = 1.0
            Sn[:, 1:] = base * np.exp(-0.5 * h * rate(tail, Lg))
            Ln = integrate(Sn, i)
            change = np.max(np.abs(Ln - Lg) / np.maximum(np.abs(Ln), 1e-300))
            Lg = Ln
            if change <= 1e-13:
                break
        else:
            if change > 1e-8:
                raise ConvergenceError(f"corrector did not settle at t = {i * h:g} "
                                       f"(relative change {change:.3g})")
        L[:, i] = Lg
        S = Sn
        if keep:
            history.append(S.copy())
    return L, history


@dataclass
class LaplaceMarch:
    """Solution of the Laplace-functional evolution for input theta * f."""

    theta: float
    t: np.ndarray
    L: np.ndarray
    x: np.ndarray
    _S: list
    _f0: float

    def u(self, t: float, x):
        """u_t(theta f)(x), linear in x between lifetime nodes (left limit at x = t)."""
        h = self.t[1] - self.t[0] if len(self.t) > 1 else 1.0
        i = int(round(t / h))
        if i >= len(self.t) or abs(self.t[i] - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"t = {t} is not a march node")
        if not self._S:
            raise ValueError("march was run with keep_u=False")
        with np.errstate(divide="ignore"):
            ug = -np.log(self._S[i])
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, np.interp(x, self.x, ug), 0.0)

    def to_grid(self) -> RenewalGrid:
        return RenewalGrid(self.t[1] - self.t[0], self.t[-1], self.t.copy(), {"L": self.L.copy()})


def _initial(spec: ModelSpec, f: TestFunction, thetas: np.ndarray):
    node = spec.disc.node
    fv = f.grid_values(node.x)
    S0 = np.exp(-np.outer(thetas, fv))
    S0[:, 0] = 1.0
    jump = np.exp(-thetas * f.at_zero_plus)
    return S0, jump


def _steps_for(spec: ModelSpec, horizon: float | None) -> int:
    h = spec.numerics.h
    if horizon is None:
        return spec.numerics.n_steps
    n = int(round(horizon / h))
    if abs(n * h - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of h = {h}")
    if n > spec.numerics.n_steps:
        raise ValueError(f"horizon {horizon} exceeds the solver horizon T = {spec.numerics.T}")
    return n


def laplace_march(spec: ModelSpec, theta_scale: float, f: TestFunction | None = None,
                  horizon: float | None = None, keep_u: bool = True) -> LaplaceMarch:
    """March u_t(theta f) and L(t) = <G, exp(-u_t(theta f))> up to ``horizon`` (default T)."""
    if theta_scale < 0:
        raise ValueError("theta must be nonnegative")
    f = spec.f if f is None else f
    n = _steps_for(spec, horizon)
    S0, jump = _initial(spec, f, np.array([float(theta_scale)]))
    L, hist = _march(spec, S0, jump, n, keep=keep_u)
    d = spec.disc
    S = [s[0] for s in hist] if keep_u else []
    return LaplaceMarch(float(theta_scale), d.t[: n + 1].copy(), L[0], d.node.x, S,
                        f.at_zero_plus)


def laplace_values(spec: ModelSpec, thetas, f: TestFunction | None = None,
                   horizon: float | None = None) -> np.ndarray:
    """L(horizon) for several input scales at once."""
    f = spec.f if f is None else f
    thetas = np.asarray(thetas, dtype=float)
    n = _steps_for(spec, horizon)
    S0, jump = _initial(spec, f, thetas)
    L, _ = _march(spec, S0, jump, n)
    return L[:, -1]


def extinction_curve(spec: ModelSpec, horizon: float | None = None) -> ExtinctionResult:
    """q(t) = P(extinct by t) by the same march with the input at +infinity."""
    res = extinction_prob(spec)
    node = spec.disc.node
    n = _steps_for(spec, horizon)
    S0 = np.zeros((1, node.n + 1))
    S0[:, 0] = 1.0
    L, _ = _march(spec, S0, np.zeros(1), n)
    d = spec.disc
    grid = RenewalGrid(d.h, d.t[n], d.t[: n + 1].copy(), {"q_t": L[0]})
    return ExtinctionResult(res.q, res.q_poisson, res.fixed_point_residual, grid)


# ---------------------------------------------------------------------------
# nested quadratures int G(dx) exp{int_0^x ...}


def _nested(spec: ModelSpec, z: np.ndarray, stride: int):
    """Per-node inner integrals on the node grid thinned by ``stride``.

    For each lifetime node x_j returns
    I_j = int_0^{x_j} alpha(x_j - s)[g(x_j - s, z(s)) - 1] ds and
    J_j = int_0^{x_j} kappa(x_j - s)[1 - z(s)] ds (trapezoid in s), with z
    given on the same nodes.  Also returns normalized outer weights.
    """
    node = spec.disc.node
    x = node.x[::stride]
    a = node.alpha[::stride]
    kap = node.kappa[::stride]
    step = node.step * stride
    n = x.size
    off = spec.offspring
    F_first = None
    I = np.zeros(n)
    J = np.zeros(n)
    # column k is the integrand at s = s_k over all y = x_j - s_k
    rowsum_I = np.zeros(n)
    rowsum_J = np.zeros(n)
    for k in range(n):
        col_I = a[: n - k] * (off.g(x[: n - k], z[k]) - 1.0)
        col_J = kap[: n - k] * (1.0 - z[k])
        rowsum_I[k:] += col_I
        rowsum_J[k:] += col_J
        if k == 0:
            F_first = (col_I.copy(), col_J.copy())
        # the s = x_j endpoint of row j = k sits at y = 0
        I[k] -= 0.5 * col_I[0]
        J[k] -= 0.5 * col_J[0]
    I += rowsum_I - 0.5 * F_first[0]
    J += rowsum_J - 0.5 * F_first[1]
    I *= step
    J *= step
    I[0] = J[0] = 0.0
    w = trapezoid_weights(n - 1, step) * node.dens[::stride]
    return I, J, w / w.sum(), x


def laplace_Y(spec: ModelSpec, sol: MalthusianSolution, theta: float) -> float:
    """E exp(-theta Y), Y = int e^{-a s} N(ds), by nested quadrature."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    vals = []
    for stride in (1, 2):
        x = spec.disc.node.x[::stride]
        z = np.exp(-theta * np.exp(-sol.alpha_tilde * x))
        I, _, W, _ = _nested(spec, z, stride)
        vals.append(float(np.dot(W, np.exp(I))))
    return float(richardson(*vals))


def psi_fun(spec: ModelSpec, sol: MalthusianSolution, u: float) -> float:
    """psi(u) = u^{-1}{E[(1 - e^{-uZ})/Z] - 1 + E e^{-uY}}, Z = e^{-a X}, X ~ e^{-a s} rho(s) ds.

    Both expectations are written over the same (x, s) quadrature so the
    bracket becomes int G(dx)[expm1(I_x) + J_x], which is >= 0 termwise.
    """
    if not u > 0:
        raise ValueError("u must be positive")
    vals = []
    for stride in (1, 2):
        x = spec.disc.node.x[::stride]
        z = np.exp(-u * np.exp(-sol.alpha_tilde * x))
        I, J, W, _ = _nested(spec, z, stride)
        vals.append(float(np.dot(W, np.expm1(I) + J)) / u)
    return float(richardson(*vals))


# ---------------------------------------------------------------------------
# limit law of W_t^f


def default_theta_grid(theta_min=1e-4, theta_max=100.0, ratio=1.5) -> np.ndarray:
    n = int(math.ceil(math.log(theta_max / theta_min) / math.log(ratio)))
    return np.concatenate([[0.0], theta_min * ratio ** np.arange(n + 1)])


@dataclass
class PhiCurve:
    theta: np.ndarray
    phi: np.ndarray
    c_slope: float
    residual: np.ndarray
    horizon: float

    @property
    def converged(self) -> bool:
        return bool(np.all(np.abs(self.residual) < 1e-2))

    def __call__(self, theta):
        """Monotone interpolation: linear in log theta, slope form below the grid."""
        theta = np.asarray(theta, dtype=float)
        pos = self.theta > 0
        th, ph = self.theta[pos], self.phi[pos]
        inside = np.interp(np.log(np.clip(theta, th[0], th[-1])), np.log(th), ph)
        below = 1.0 - self.c_slope * theta
        return np.where(theta < th[0], np.maximum(below, ph[0]), inside)


def _phi_residual(spec: ModelSpec, sol: MalthusianSolution, curve: PhiCurve, stride=4):
    x = spec.disc.node.x[::stride]
    res = np.empty(curve.theta.size)
    for k, th in enumerate(curve.theta):
        z = curve(th * np.exp(-sol.alpha_tilde * x))
        I, _, W, _ = _nested(spec, z, stride)
        res[k] = curve.phi[k] - float(np.dot(W, np.exp(I)))
    return res


def phi_limit(spec: ModelSpec, sol: MalthusianSolution, thetas=None,
              lim: LimitFunctionals | None = None, strict: bool = False) -> PhiCurve:
    """phi^f(theta) = lim E exp(-theta W_t^f), via L(T) for the input theta e^{-a T} f."""
    thetas = default_theta_grid() if thetas is None else np.asarray(thetas, dtype=float)
    if np.any(thetas < 0):
        raise ValueError("theta values must be nonnegative")
    nodes = np.unique(np.concatenate([[0.0], thetas]))
    if nodes.size < 2:
        raise ValueError("need at least one positive theta")
    if lim is None:
        lim = limit_functionals(spec, sol)
    T = spec.numerics.n_steps * spec.numerics.h
    phi = laplace_values(spec, nodes * math.exp(-sol.alpha_tilde * T))
    phi = np.minimum.accumulate(np.clip(phi, 0.0, 1.0))
    curve = PhiCurve(nodes, phi, lim.a_f, np.zeros(nodes.size), T)
    curve.residual = _phi_residual(spec, sol, curve)
    if strict and not curve.converged:
        raise ConvergenceError(f"functional-equation residual {np.max(np.abs(curve.residual)):.3g} "
                               f">= 1e-2; increase T")
    return curve
