"""Deterministic core: reproduction kernel, growth rate, renewal moments, limit functionals.

Notation used below (all functions of the remaining lifetime x or time t):

* ``kappa(x) = alpha(x) gp1(x)`` is the mean offspring rate;
* ``rho(s) = int kappa(u) g_G(u + s) du`` is the density of child-bearing ages;
* ``V_a(x) = int_0^x kappa(u) exp(-a (x - u)) du``, so that
  ``int exp(-a s) rho(s) ds = <G, V_a>``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .model import ModelSpec, TestFunction
from .quadrature import (
    cumtrapz, expconv, newton_cotes_weights, richardson, solve_renewal,
    trapezoid_convolution, trapezoid_weights, two_piece_integral,
)

__all__ = [
    "MalthusianSolution", "RenewalGrid", "LimitFunctionals", "SecondMoment", "CltVariance",
    "Curve", "SubcriticalError", "repro_density", "malthusian", "mean_measure",
    "mean_semigroup", "limit_functionals", "second_moment", "clt_variance",
]


class SubcriticalError(ValueError):
    """The growth-rate equation has no positive root (m <= 1)."""


class Curve:
    """Interpolated function of x >= 0, returning 0 for x <= 0 and the last value beyond the data."""

    def __init__(self, x, y, kind="pchip"):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        cls = PchipInterpolator if kind == "pchip" else CubicSpline
        self._interp = cls(self.x, self.y, extrapolate=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, self.x[0], self.x[-1])
        return np.where(x > 0, self._interp(xc), 0.0)

    def as_test_function(self) -> TestFunction:
        keep = self.x > 0
        return TestFunction.from_values(self.x[keep], np.maximum(self.y[keep], 0.0))


# ---------------------------------------------------------------------------
# reproduction kernel


def _trap(grid):
    return trapezoid_weights(grid.n, grid.step)


def repro_density(spec: ModelSpec, s):
    """rho(s), the density of the mean reproduction measure, at s >= 0."""
    d = spec.disc
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.empty(s_arr.shape)
    for k, sv in enumerate(s_arr):
        if sv >= d.x_max:
            out[k] = 0.0
            continue
        est = [float(np.dot(_trap(g) * g.kappa, spec.lifetime.grid_pdf(g.x + sv)))
               for g in (d.fine, d.coarse)]
        out[k] = max(richardson(*est), 0.0)
    return out[0] if np.ndim(s) == 0 else out


def _correlate_on_nodes(d, weight_fine, weight_coarse, dens_fine, dens_coarse, n_shift):
    """int w(u) g_G(u + t_i) du at renewal nodes t_i, i = 0..n_shift.

    ``dens_*`` are densities on the extended grids (length >= n + shift + 1).
    """
    out = []
    for grid, w, dens in ((d.fine, weight_fine, dens_fine), (d.coarse, weight_coarse, dens_coarse)):
        r = int(round(d.h / grid.step))
        vals = np.empty(n_shift + 1)
        wq = _trap(grid) * w
        for i in range(n_shift + 1):
            vals[i] = np.dot(wq, dens[i * r: i * r + grid.n + 1])
        out.append(vals)
    return (4.0 * out[0] - out[1]) / 3.0


def _extended_densities(d, n_shift):
    r_f = int(round(d.h / d.fine.step))
    r_c = int(round(d.h / d.coarse.step))
    return d.fine.shifted_density(n_shift * r_f), d.coarse.shifted_density(n_shift * r_c)


def _kernel_nodes(spec: ModelSpec, weight: str = "kappa") -> np.ndarray:
    """rho (or its second-moment analogue) on the renewal nodes."""
    d = spec.disc
    key = f"_kernel_{weight}"
    cache = d.__dict__
    if key not in cache:
        dens_f, dens_c = _extended_densities(d, d.nt)
        vals = _correlate_on_nodes(d, getattr(d.fine, weight), getattr(d.coarse, weight),
                                   dens_f, dens_c, d.nt)
        cache[key] = np.maximum(vals, 0.0)
    return cache[key]


def _forcing_nodes(spec: ModelSpec, f: TestFunction) -> np.ndarray:
    """z(t) = int f(u) g_G(u + t) du on the renewal nodes."""
    d = spec.disc
    life = spec.lifetime
    if f.kind == "one":
        return f.scale * life.sf(d.t)
    if f.kind == "indicator":
        return f.scale * (life.cdf(d.t + f.x0) - life.cdf(d.t))
    dens_f, dens_c = _extended_densities(d, d.nt)
    vals = _correlate_on_nodes(d, f.grid_values(d.fine.x), f.grid_values(d.coarse.x),
                               dens_f, dens_c, d.nt)
    return np.maximum(vals, 0.0)


# ---------------------------------------------------------------------------
# growth rate


@dataclass(frozen=True)
class MalthusianSolution:
    alpha_tilde: float
    m: float
    c9: float
    n1: float
    residual: float = 0.0

    def to_dict(self):
        return {"alpha_tilde": self.alpha_tilde, "m": self.m, "c9": self.c9,
                "n1": self.n1, "residual": self.residual}


def _laplace_kernel(spec: ModelSpec, a: float) -> float:
    """int exp(-a s) rho(s) ds = <G, V_a>."""
    d = spec.disc
    vals = [float(np.dot(_trap(g) * g.dens, expconv(g.kappa, g.step, a)))
            for g in (d.fine, d.coarse)]
    return float(richardson(*vals))


def _first_moment_kernel(spec: ModelSpec, a: float) -> float:
    """int s exp(-a s) rho(s) ds = <G, x V_a(x) - int_0^x u kappa(u) e^{-a(x-u)} du>."""
    d = spec.disc
    vals = []
    for g in (d.fine, d.coarse):
        inner = g.x * expconv(g.kappa, g.step, a) - expconv(g.x * g.kappa, g.step, a)
        vals.append(float(np.dot(_trap(g) * g.dens, inner)))
    return float(richardson(*vals))


def _omega_nodes(spec: ModelSpec, a: float):
    """omega(y) = int_0^inf e^{-a u} g_G(y + u) du on the coarse nodes, plus its running integral."""
    d = spec.disc
    om, cum = [], []
    for g in (d.fine, d.coarse):
        w = expconv(g.dens[::-1], g.step, a)[::-1]
        om.append(w)
        cum.append(cumtrapz(w, g.step))
    return richardson(*om), richardson(*cum)


def malthusian(spec: ModelSpec) -> MalthusianSolution:
    """Growth rate by bisection on the decreasing map a -> int e^{-a s} rho(s) ds."""
    from .model import mean_total_offspring

    m = mean_total_offspring(spec)
    if not m > 1.0:
        raise SubcriticalError(f"regime assumption fails: m = {m:.6g} <= 1 (not supercritical)")
    tol = spec.numerics.tol
    lo, hi = 0.0, 1.0
    for _ in range(60):
        if _laplace_kernel(spec, hi) < 1.0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ValueError("growth-rate bracket not found within 60 doublings")
    a = 0.5 * (lo + hi)
    for _ in range(spec.numerics.max_iter):
        a = 0.5 * (lo + hi)
        val = _laplace_kernel(spec, a)
        if abs(val - 1.0) < 0.1 * tol or hi - lo < 1e-15 * max(1.0, a):
            break
        if val > 1.0:
            lo = a
        else:
            hi = a
    residual = abs(_laplace_kernel(spec, a) - 1.0)
    c9 = _first_moment_kernel(spec, a)
    _, cum = _omega_nodes(spec, a)
    n1 = float(cum[-1]) / c9
    return MalthusianSolution(alpha_tilde=a, m=m, c9=c9, n1=n1, residual=residual)


# ---------------------------------------------------------------------------
# first moment


@dataclass
class RenewalGrid:
    h: float
    T: float
    t: np.ndarray
    curves: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, c in self.curves.items():
            self._check(name, c)

    def _check(self, name, c):
        if len(c) != len(self.t):
            raise ValueError(f"curve {name!r} has {len(c)} values for {len(self.t)} nodes")

    def add(self, name, values):
        values = np.asarray(values, dtype=float)
        self._check(name, values)
        self.curves[name] = values

    def __getitem__(self, name) -> np.ndarray:
        return self.curves[name]

    def at(self, name, t):
        """Linear interpolation of a curve at arbitrary times within the horizon."""
        t = np.asarray(t, dtype=float)
        if np.any(t > self.T + 1e-9) or np.any(t < 0):
            raise ValueError(f"time outside grid [0, {self.T}]")
        return np.interp(t, self.t, self.curves[name])

    def index(self, t) -> int:
        i = int(round(t / self.h))
        if abs(i * self.h - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"t = {t} is not a grid node (h = {self.h})")
        if i >= len(self.t):
            raise ValueError(f"t = {t} beyond grid horizon {self.T}")
        return i


def mean_measure(spec: ModelSpec, sol: MalthusianSolution | None = None) -> RenewalGrid:
    """Solve M(t) = z(t) + int_0^t M(t - s) rho(s) ds with M(t) = <G, pi_t f>."""
    d = spec.disc
    rho = _kernel_nodes(spec)
    z = _forcing_nodes(spec, spec.f)
    M = solve_renewal(z, rho, d.h)
    return RenewalGrid(d.h, d.t[-1], d.t.copy(), {"rho": rho, "z": z, "M_f": M})


def _path_integral(spec: ModelSpec, grid: RenewalGrid, t: float, x: float, terms) -> float:
    """int_0^{t ^ x} sum_k a_k(x - s) b_k(t - s) ds by the trapezoid rule.

    ``terms`` is a list of (callable a(y), curve name or array b on the grid).
    Nodes are spaced at most h apart; ``b`` is interpolated linearly.
    """
    upper = min(t, x)
    if upper <= 0:
        return 0.0
    n = max(1, int(math.ceil(upper / grid.h - 1e-9)))
    s = np.linspace(0.0, upper, n + 1)
    s[-1] = upper
    y = x - s
    # alpha at y = 0 is approached from the right along the path
    y = np.where(y <= 0, 0.0, y)
    w = trapezoid_weights(n, upper / n)
    total = 0.0
    for a_fn, b in terms:
        bv = b if not isinstance(b, str) else grid.curves[b]
        total += float(np.dot(w, a_fn(y) * np.interp(t - s, grid.t, bv)))
    return total


def mean_semigroup(spec: ModelSpec, grid: RenewalGrid, t: float, x: float) -> float:
    """pi_t f(x) = f(x - t) + int_0^{t ^ x} kappa(x - s) M_f(t - s) ds."""
    if t > grid.T + 1e-9:
        raise ValueError(f"t = {t} beyond grid horizon {grid.T}")
    kappa = lambda y: spec.alpha.raw(y) * spec.offspring.gp1(y)  # noqa: E731
    return float(spec.f(x - t)) + _path_integral(spec, grid, t, x, [(kappa, "M_f")])


# ---------------------------------------------------------------------------
# limit functionals


@dataclass(frozen=True)
class LimitFunctionals:
    a_f: float
    A_f: float
    A_curve: Curve
    V_curve: Curve
    sigma_curve: Curve
    A_sigma: float
    omega: Curve
    omega_mass: float

    def A(self, fn) -> float:
        """A applied to a function of x (callable), by quadrature against omega."""
        x = self.omega.x
        w = trapezoid_weights(len(x) - 1, x[1] - x[0])
        return float(np.dot(w * self.omega.y, fn(x))) / self.omega_mass

    def to_dict(self):
        return {"a_f": self.a_f, "A_f": self.A_f, "A_sigma": self.A_sigma,
                "omega_mass": self.omega_mass}


def _omega_integral(spec: ModelSpec, sol: MalthusianSolution, f: TestFunction):
    """(int f omega, int omega), Richardson-extrapolated."""
    d = spec.disc
    a = sol.alpha_tilde
    nums, dens = [], []
    for g in (d.fine, d.coarse):
        om = expconv(g.dens[::-1], g.step, a)[::-1]
        w = _trap(g) * om
        dens.append(w.sum())
        nums.append(float(np.dot(w, f.grid_values(g.x))))
    return float(richardson(*nums)), float(richardson(*dens))


def limit_functionals(spec: ModelSpec, sol: MalthusianSolution) -> LimitFunctionals:
    d = spec.disc
    a = sol.alpha_tilde
    om, cum = _omega_nodes(spec, a)
    xc = d.coarse.x
    num, den = _omega_integral(spec, sol, spec.f)
    a_f = num / sol.c9
    A_f = num / den
    A_curve = Curve(xc, np.clip(cum / cum[-1], 0.0, 1.0))
    V = richardson(expconv(d.fine.kappa, d.fine.step, a), expconv(d.coarse.kappa, d.coarse.step, a))
    V_curve = Curve(xc, V, kind="cubic")
    sigma_curve = Curve(xc, V.copy(), kind="cubic")
    vals = []
    for g in (d.fine, d.coarse):
        omg = expconv(g.dens[::-1], g.step, a)[::-1]
        vals.append(float(np.dot(_trap(g) * omg, expconv(g.kappa, g.step, a))))
    A_sigma = float(richardson(*vals)) / den
    return LimitFunctionals(a_f=a_f, A_f=A_f, A_curve=A_curve, V_curve=V_curve,
                            sigma_curve=sigma_curve, A_sigma=A_sigma,
                            omega=Curve(xc, om), omega_mass=den)


def G_mean(spec: ModelSpec, fn) -> float:
    """<G, fn> by extrapolated trapezoid quadrature on the truncated support."""
    d = spec.disc
    vals = [float(np.dot(_trap(g) * g.dens, fn(g.x))) for g in (d.fine, d.coarse)]
    return float(richardson(*vals))


# ---------------------------------------------------------------------------
# second moment


def _march(a_nodes: np.ndarray, b_series: np.ndarray, h: float, i_end: int,
           init: np.ndarray | None = None, store=None):
    """Characteristic sums P_i(j) = P_{i-1}(j-1) + h/2 (a_j b_i + a_{j-1} b_{i-1}).

    P_i(0) = 0 and P_0 = ``init`` (zeros by default).  ``store(i, P_i)`` is
    called after every step, including i = 0.
    """
    P = np.zeros_like(a_nodes) if init is None else init.astype(float).copy()
    P[0] = 0.0
    if store is not None:
        store(0, P)
    half = 0.5 * h
    for i in range(1, i_end + 1):
        nxt = np.empty_like(P)
        nxt[0] = 0.0
        nxt[1:] = P[:-1] + half * (a_nodes[1:] * b_series[i] + a_nodes[:-1] * b_series[i - 1])
        P = nxt
        if store is not None:
            store(i, P)
    return P


@dataclass
class SecondMoment:
    """Second-moment solution.

    ``grid`` carries ``Gamma_f`` (= <G, gamma_t f>), ``Q2`` (= <G, (pi_t f)^2>),
    ``zeta`` (forcing of the Gamma renewal equation) and ``Var_f``, the
    variance of <X_t, f> for the process started from one G-distributed
    ancestor, which is Q2 - M_f^2 + Gamma_f.
    """

    spec: ModelSpec
    grid: RenewalGrid

    def _source_terms(self):
        spec = self.spec
        k2 = lambda y: spec.alpha.raw(y) * spec.offspring.gpp1(y)  # noqa: E731
        k1 = lambda y: spec.alpha.raw(y) * spec.offspring.gp1(y)  # noqa: E731
        g = self.grid
        return [(k2, g["M_f"] ** 2), (k1, g["Q2"] + g["Gamma_f"])]

    def gamma(self, t: float, x: float) -> float:
        """gamma_t f(x): variance of <X_t, f> for the process started at remaining lifetime x."""
        if t > self.grid.T + 1e-9:
            raise ValueError(f"t = {t} beyond grid horizon {self.grid.T}")
        return _path_integral(self.spec, self.grid, t, x, self._source_terms())

    def gamma_profile(self, i: int) -> np.ndarray:
        """gamma_{t_i} f on the lifetime nodes ``spec.disc.node.x``."""
        node = self.spec.disc.node
        g = self.grid
        h = g.h
        p1 = _march(node.kappa2, g["M_f"] ** 2, h, i)
        p2 = _march(node.kappa, g["Q2"] + g["Gamma_f"], h, i)
        return p1 + p2


def _pi_moments(spec: ModelSpec, M: np.ndarray):
    """Q2(t_i) = <G, (pi_{t_i} f)^2> via the characteristic march of pi_t f on the node grid."""
    d = spec.disc
    node = d.node
    f0 = spec.f.at_zero_plus
    init = spec.f.grid_values(node.x)
    Q2 = np.empty(d.nt + 1)

    def store(i, P):
        right = (P[i] + f0) ** 2 if i <= node.n else 0.0
        Q2[i] = two_piece_integral(P ** 2, right, i, node.dens, node.step)

    _march(node.kappa, M, d.h, d.nt, init=init, store=store)
    return Q2


def second_moment(spec: ModelSpec, sol: MalthusianSolution | None, grid: RenewalGrid) -> SecondMoment:
    """Solve Gamma(t) = zeta(t) + int_0^t Gamma(t - s) rho(s) ds with Gamma(t) = <G, gamma_t f>."""
    d = spec.disc
    if not math.isfinite(float(np.max(d.node.gpp1))):
        raise ValueError("second factorial moment of the offspring law is unbounded")
    M = grid["M_f"]
    rho = grid["rho"]
    Q2 = _pi_moments(spec, M)
    rho2 = _kernel_nodes(spec, "kappa2")
    zeta = trapezoid_convolution(rho2, M ** 2, d.h) + trapezoid_convolution(rho, Q2, d.h)
    Gamma = solve_renewal(zeta, rho, d.h)
    out = RenewalGrid(grid.h, grid.T, grid.t, dict(grid.curves))
    out.add("Q2", Q2)
    out.add("zeta", zeta)
    out.add("Gamma_f", np.maximum(Gamma, 0.0))
    out.add("Var_f", np.maximum(Q2 - M ** 2 + Gamma, 0.0))
    return SecondMoment(spec, out)


# ---------------------------------------------------------------------------
# CLT variances


@dataclass(frozen=True)
class CltVariance:
    v_window: float
    v_limit: float | str
    Df: float | str
    integrability_diag: tuple
    s0: float

    def to_dict(self):
        return {"s0": self.s0, "v_window": self.v_window, "v_limit": self.v_limit,
                "Df": self.Df, "integrability_diag": [list(p) for p in self.integrability_diag]}


def _A_on_nodes(spec: ModelSpec, lim: LimitFunctionals, values: np.ndarray) -> float:
    node = spec.disc.node
    om = lim.omega(node.x)
    om[0] = lim.omega.y[0]
    w = newton_cotes_weights(node.n, node.step) if node.n % 2 == 0 or node.n > 2 \
        else trapezoid_weights(node.n, node.step)
    w = w * om
    return float(np.dot(w, values) / w.sum())


def clt_variance(spec: ModelSpec, sol: MalthusianSolution, s0: float,
                 second: SecondMoment | None = None,
                 lim: LimitFunctionals | None = None) -> CltVariance:
    """Fixed-window variance e^{-a s0} A(gamma_{s0} f), plus the long-run constant when it exists."""
    if lim is None:
        lim = limit_functionals(spec, sol)
    if second is None:
        second = second_moment(spec, sol, mean_measure(spec, sol))
    g = second.grid
    a = sol.alpha_tilde
    i0 = int(round(s0 / g.h))
    if i0 >= len(g.t):
        raise ValueError(f"s0 = {s0} beyond grid horizon {g.T}")
    if i0 == 0:
        v_window = 0.0
    else:
        v_window = math.exp(-a * g.t[i0]) * _A_on_nodes(spec, lim, second.gamma_profile(i0))

    scaled = np.exp(-a * g.t) * g["Gamma_f"]
    tail = scaled[3 * (len(scaled) - 1) // 4:]
    rel = (tail[-1] - tail[0]) / max(abs(tail[-1]), 1e-300)
    if np.all(np.diff(tail) >= 0) and rel > 0.05:
        Df: float | str = "divergent"
        v_limit: float | str = "divergent"
    else:
        Df = float(tail[-1])
        v_limit = lim.A_sigma * Df
    # Pi(t) with the free shift set to 0 equals e^{-a t} zeta(t)
    idx = np.unique(np.linspace(0, len(g.t) - 1, 13).round().astype(int))
    diag = tuple((float(g.t[i]), float(math.exp(-a * g.t[i]) * g["zeta"][i])) for i in idx)
    return CltVariance(v_window=float(v_window), v_limit=v_limit, Df=Df,
                       integrability_diag=diag, s0=float(g.t[i0]))
