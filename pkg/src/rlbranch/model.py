"""Model definition: reproduction rate, offspring law, lifetime law, test function.

A configuration document is a JSON object with keys ``alpha``, ``offspring``,
``lifetime``, ``f`` and optionally ``numerics`` and ``sim``.  Every evaluator
follows the convention that functions of the remaining lifetime vanish for
arguments ``x <= 0``; the ``raw`` evaluators skip that rule and are what the
grid solvers use at the node ``x = 0`` (right limit).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any

import numpy as np
from scipy import stats

__all__ = [
    "ConfigError", "Table", "RateFunction", "OffspringLaw", "LifetimeDistribution",
    "TestFunction", "NumericsConfig", "ModelSpec", "ValidationReport", "Check",
    "build_model", "load_config", "validate", "mean_total_offspring",
]


class ConfigError(ValueError):
    """Malformed configuration document."""


def _expect_keys(doc: dict, where: str, required, optional=()):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    missing = [k for k in required if k not in doc]
    if missing:
        raise ConfigError(f"{where}: missing field(s) {missing}")
    extra = sorted(set(doc) - set(required) - set(optional))
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {extra}")


def _number(value, where: str, *, lo=None, lo_open=False, integer=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise ConfigError(f"{where}: must be finite")
    if integer and v != int(v):
        raise ConfigError(f"{where}: must be an integer")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        op = ">" if lo_open else ">="
        raise ConfigError(f"{where}: must be {op} {lo}, got {v}")
    return v


class Table:
    """Piecewise-linear function of the remaining lifetime.

    Knots must be strictly increasing and positive.  Between knots the value
    is interpolated linearly; outside the knot range it is held constant.
    """

    def __init__(self, xs, ys, where="table"):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 1 or xs.size == 0 or xs.shape != ys.shape:
            raise ConfigError(f"{where}: xs and ys must be non-empty lists of equal length")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ConfigError(f"{where}: non-finite entries")
        if np.any(xs <= 0):
            raise ConfigError(f"{where}: knots must be positive")
        if np.any(np.diff(xs) <= 0):
            raise ConfigError(f"{where}: non-increasing knots")
        if np.any(ys < 0):
            raise ConfigError(f"{where}: negative parameter value")
        self.xs = xs
        self.ys = ys
        self.xs.setflags(write=False)
        self.ys.setflags(write=False)

    def __call__(self, x):
        return np.interp(x, self.xs, self.ys)

    @property
    def sup(self) -> float:
        return float(self.ys.max())

    def to_config(self) -> dict:
        return {"xs": self.xs.tolist(), "ys": self.ys.tolist()}

    @classmethod
    def from_config(cls, doc, where):
        _expect_keys(doc, where, ("xs", "ys"))
        for key in ("xs", "ys"):
            if not isinstance(doc[key], list):
                raise ConfigError(f"{where}.{key}: expected a list")
            for i, v in enumerate(doc[key]):
                _number(v, f"{where}.{key}[{i}]")
        return cls(doc["xs"], doc["ys"], where)


class _Param:
    """Either a constant or a :class:`Table` over remaining lifetime."""

    def __init__(self, value, where, *, upper=None):
        if isinstance(value, dict):
            self.table = Table.from_config(value, where)
            self.const = None
            if upper is not None and self.table.ys.max() > upper:
                raise ConfigError(f"{where}: values must not exceed {upper}")
        else:
            self.const = _number(value, where, lo=0.0)
            self.table = None
            if upper is not None and self.const > upper:
                raise ConfigError(f"{where}: must not exceed {upper}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.table is None:
            return np.full(x.shape, self.const)
        return self.table(x)

    @property
    def knots(self) -> np.ndarray:
        return np.empty(0) if self.table is None else self.table.xs

    @property
    def sup(self) -> float:
        return self.const if self.table is None else self.table.sup

    def to_config(self):
        return self.const if self.table is None else self.table.to_config()


# ---------------------------------------------------------------------------
# reproduction rate


@dataclass(frozen=True)
class RateFunction:
    kind: str
    value: float | None = None
    table: Table | None = None

    @classmethod
    def from_config(cls, doc: dict) -> "RateFunction":
        kind = doc.get("kind") if isinstance(doc, dict) else None
        if kind == "constant":
            _expect_keys(doc, "alpha", ("kind", "value"))
            return cls("constant", value=_number(doc["value"], "alpha.value", lo=0.0))
        if kind == "table":
            _expect_keys(doc, "alpha", ("kind", "xs", "ys"))
            t = Table.from_config({"xs": doc["xs"], "ys": doc["ys"]}, "alpha")
            return cls("table", table=t)
        raise ConfigError(f"alpha: unknown kind {kind!r} (expected constant | table)")

    def raw(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape, self.value)
        return self.table(x)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, self.raw(x), 0.0)

    @property
    def sup(self) -> float:
        return self.value if self.kind == "constant" else self.table.sup

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or bool(np.all(self.table.ys == self.table.ys[0]))

    @property
    def knots(self) -> np.ndarray:
        return np.empty(0) if self.table is None else self.table.xs

    def to_config(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        return {"kind": "table", **self.table.to_config()}


# ---------------------------------------------------------------------------
# offspring law

_OFFSPRING_PARAMS = {
    "deterministic": ("n",),
    "poisson": ("mean",),
    "binary": ("p0", "p2"),
    "geometric": ("mean",),
}

# Tail cut for unbounded supports in validation sums.
_PMF_TAIL = 1e-12


@dataclass(frozen=True)
class OffspringLaw:
    """Offspring-count law p(x, .) at a birth event, x = parent's remaining lifetime.

    Families: deterministic(n), poisson(mean), binary(p0, p2) on {0, 1, 2},
    geometric(mean) on {0, 1, 2, ...}.
    """

    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, doc: dict) -> "OffspringLaw":
        kind = doc.get("kind") if isinstance(doc, dict) else None
        if kind not in _OFFSPRING_PARAMS:
            raise ConfigError(f"offspring: unknown kind {kind!r} "
                              f"(expected one of {sorted(_OFFSPRING_PARAMS)})")
        names = _OFFSPRING_PARAMS[kind]
        _expect_keys(doc, "offspring", ("kind",) + names)
        if kind == "deterministic":
            if isinstance(doc["n"], dict):
                raise ConfigError("offspring.n: deterministic count must be a constant integer")
            n = _number(doc["n"], "offspring.n", lo=0.0, integer=True)
            return cls(kind, {"n": int(n)})
        upper = 1.0 if kind == "binary" else None
        params = {k: _Param(doc[k], f"offspring.{k}", upper=upper) for k in names}
        law = cls(kind, params)
        if kind == "binary":
            grid = np.union1d(np.union1d(params["p0"].knots, params["p2"].knots), [1.0])
            if np.any(params["p0"](grid) + params["p2"](grid) > 1.0 + 1e-15):
                raise ConfigError("offspring: binary law needs p0 + p2 <= 1")
        return law

    def to_config(self) -> dict:
        out = {"kind": self.kind}
        for k, v in self.params.items():
            out[k] = v if isinstance(v, int) else v.to_config()
        return out

    @property
    def knots(self) -> np.ndarray:
        ks = [p.knots for p in self.params.values() if isinstance(p, _Param)]
        return np.unique(np.concatenate(ks)) if ks else np.empty(0)

    def _p(self, name, x):
        return self.params[name](x)

    def g(self, x, z):
        """Generating function g(x, z) = sum_n p(x, n) z^n."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.kind == "deterministic":
            return np.broadcast_to(z ** self.params["n"], np.broadcast(x, z).shape).copy()
        if self.kind == "poisson":
            return np.exp(self._p("mean", x) * (z - 1.0))
        if self.kind == "geometric":
            return 1.0 / (1.0 + self._p("mean", x) * (1.0 - z))
        p0, p2 = self._p("p0", x), self._p("p2", x)
        return p0 + (1.0 - p0 - p2) * z + p2 * z * z

    def gp1(self, x):
        """Mean offspring count g'(x, 1-)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "deterministic":
            return np.full(x.shape, float(self.params["n"]))
        if self.kind in ("poisson", "geometric"):
            return self._p("mean", x)
        p0, p2 = self._p("p0", x), self._p("p2", x)
        return (1.0 - p0 - p2) + 2.0 * p2

    def gpp1(self, x):
        """Second factorial moment g''(x, 1-)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "deterministic":
            n = self.params["n"]
            return np.full(x.shape, float(n * (n - 1)))
        if self.kind == "poisson":
            return self._p("mean", x) ** 2
        if self.kind == "geometric":
            return 2.0 * self._p("mean", x) ** 2
        return 2.0 * self._p("p2", x)

    def pmf(self, x, n):
        x = np.asarray(x, dtype=float)
        n = np.asarray(n)
        if self.kind == "deterministic":
            return np.where(n == self.params["n"], 1.0, 0.0) + 0.0 * x
        if self.kind == "poisson":
            return stats.poisson.pmf(n, self._p("mean", x))
        if self.kind == "geometric":
            mu = self._p("mean", x)
            return stats.geom.pmf(n + 1, 1.0 / (1.0 + mu))
        p0, p2 = self._p("p0", x), self._p("p2", x)
        return np.select([n == 0, n == 1, n == 2], [p0, 1.0 - p0 - p2, p2], 0.0)

    def support_max(self, x) -> int:
        """Largest count kept in validation sums (tail mass below 1e-12)."""
        if self.kind == "deterministic":
            return self.params["n"]
        if self.kind == "binary":
            return 2
        mu = float(np.max(self._p("mean", x)))
        if self.kind == "poisson":
            return int(stats.poisson.isf(_PMF_TAIL, mu)) + 1
        return int(stats.geom.isf(_PMF_TAIL, 1.0 / (1.0 + mu))) + 1

    def nlogn_moment(self, x):
        """sum_n n |log n| p(x, n), evaluated per x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.kind == "deterministic":
            n = self.params["n"]
            return np.full(x.shape, n * abs(math.log(n)) if n > 0 else 0.0)
        if self.kind == "binary":
            return 2.0 * math.log(2.0) * self._p("p2", x)
        nmax = self.support_max(x)
        ns = np.arange(1, nmax + 1)
        w = ns * np.log(ns)
        return np.array([np.dot(w, self.pmf(xi, ns)) for xi in x])

    def pmf_mass(self, x):
        """Total mass of the truncated pmf at each x (1 within 1e-12)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ns = np.arange(0, self.support_max(x) + 1)
        return np.array([self.pmf(xi, ns).sum() for xi in x])

    def sample(self, rng: np.random.Generator, x) -> np.ndarray:
        """One offspring count per entry of ``x``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "deterministic":
            return np.full(x.shape, self.params["n"], dtype=np.int64)
        if self.kind == "poisson":
            return rng.poisson(self._p("mean", x))
        if self.kind == "geometric":
            return rng.geometric(1.0 / (1.0 + self._p("mean", x))) - 1
        p0, p2 = self._p("p0", x), self._p("p2", x)
        u = rng.random(x.shape)
        return np.where(u < p0, 0, np.where(u < 1.0 - p2, 1, 2)).astype(np.int64)


# ---------------------------------------------------------------------------
# lifetime law

_LIFETIME_PARAMS = {
    "exponential": ("rate",),
    "gamma": ("shape", "scale"),
    "uniform": ("lo", "hi"),
    "weibull": ("shape", "scale"),
}


@dataclass(frozen=True)
class LifetimeDistribution:
    kind: str
    params: dict

    @classmethod
    def from_config(cls, doc: dict) -> "LifetimeDistribution":
        kind = doc.get("kind") if isinstance(doc, dict) else None
        if kind not in _LIFETIME_PARAMS:
            raise ConfigError(f"lifetime: unknown kind {kind!r} "
                              f"(expected one of {sorted(_LIFETIME_PARAMS)})")
        names = _LIFETIME_PARAMS[kind]
        _expect_keys(doc, "lifetime", ("kind",) + names)
        p = {k: _number(doc[k], f"lifetime.{k}", lo=0.0, lo_open=(k != "lo")) for k in names}
        if kind == "uniform" and p["hi"] <= p["lo"]:
            raise ConfigError("lifetime: uniform needs lo < hi")
        if kind in ("gamma", "weibull") and p["shape"] < 1.0:
            # the grid quadratures need a bounded density at 0
            raise ConfigError(f"lifetime: {kind} shape must be >= 1 (bounded density)")
        return cls(kind, p)

    def to_config(self) -> dict:
        return {"kind": self.kind, **self.params}

    @cached_property
    def dist(self):
        p = self.params
        if self.kind == "exponential":
            return stats.expon(scale=1.0 / p["rate"])
        if self.kind == "gamma":
            return stats.gamma(p["shape"], scale=p["scale"])
        if self.kind == "uniform":
            return stats.uniform(loc=p["lo"], scale=p["hi"] - p["lo"])
        return stats.weibull_min(p["shape"], scale=p["scale"])

    def cdf(self, x):
        return self.dist.cdf(x)

    def sf(self, x):
        return self.dist.sf(x)

    def pdf(self, x):
        return self.dist.pdf(x)

    def grid_pdf(self, x):
        """Density for grid quadrature: jumps of the uniform density take the midpoint value."""
        d = self.dist.pdf(x)
        if self.kind == "uniform":
            lo = self.params["lo"]
            d = np.where(np.isclose(x, lo, rtol=0, atol=1e-12) & (lo > 0), 0.5 * d, d)
        return d

    def quantile(self, q):
        return self.dist.ppf(q)

    def upper(self, tail_q: float) -> float:
        """Truncation point of the support: quantile 1 - tail_q."""
        if self.kind == "uniform":
            return self.params["hi"]
        return float(self.dist.isf(tail_q))

    def mean(self) -> float:
        return float(self.dist.mean())

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        p = self.params
        if self.kind == "exponential":
            out = rng.exponential(1.0 / p["rate"], size)
        elif self.kind == "gamma":
            out = rng.gamma(p["shape"], p["scale"], size)
        elif self.kind == "uniform":
            out = rng.uniform(p["lo"], p["hi"], size)
        else:
            out = p["scale"] * rng.weibull(p["shape"], size)
        # a zero lifespan has probability 0 but can appear from rounding
        return np.maximum(out, np.finfo(float).tiny)


# ---------------------------------------------------------------------------
# test function


@dataclass(frozen=True)
class TestFunction:
    """Bounded nonnegative f on (0, inf), zero for x <= 0.

    ``scale`` multiplies the whole function; it is not part of the config
    schema and only exists so that c*f can be formed programmatically.
    """

    __test__ = False  # keep pytest from collecting it

    kind: str
    x0: float | None = None
    rate: float | None = None
    table: Table | None = None
    scale: float = 1.0

    @classmethod
    def from_config(cls, doc: dict) -> "TestFunction":
        kind = doc.get("kind") if isinstance(doc, dict) else None
        if kind == "one":
            _expect_keys(doc, "f", ("kind",))
            return cls("one")
        if kind == "indicator":
            _expect_keys(doc, "f", ("kind", "x"))
            return cls("indicator", x0=_number(doc["x"], "f.x", lo=0.0, lo_open=True))
        if kind == "expdecay":
            _expect_keys(doc, "f", ("kind", "rate"))
            return cls("expdecay", rate=_number(doc["rate"], "f.rate", lo=0.0))
        if kind == "table":
            _expect_keys(doc, "f", ("kind", "xs", "ys"))
            return cls("table", table=Table.from_config({"xs": doc["xs"], "ys": doc["ys"]}, "f"))
        raise ConfigError(f"f: unknown kind {kind!r} (expected one | indicator | expdecay | table)")

    @classmethod
    def from_values(cls, xs, ys) -> "TestFunction":
        return cls("table", table=Table(xs, ys, "f"))

    def to_config(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "indicator":
            out["x"] = self.x0
        elif self.kind == "expdecay":
            out["rate"] = self.rate
        elif self.kind == "table":
            out.update(self.table.to_config())
        if self.scale != 1.0:
            out["scale"] = self.scale
        return out

    def scaled(self, c: float) -> "TestFunction":
        return replace(self, scale=self.scale * float(c))

    def _raw(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "one":
            v = np.ones(x.shape)
        elif self.kind == "indicator":
            v = (x <= self.x0).astype(float)
        elif self.kind == "expdecay":
            v = np.exp(-self.rate * x)
        else:
            v = self.table(x)
        return self.scale * v

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, self._raw(x), 0.0)

    @property
    def at_zero_plus(self) -> float:
        return float(self._raw(0.0))

    def grid_values(self, x):
        """Node values for quadrature: right limit at 0, midpoint at an interior jump."""
        x = np.asarray(x, dtype=float)
        v = self._raw(x)
        if self.kind == "indicator":
            v = np.where(np.isclose(x, self.x0, rtol=0, atol=1e-12), 0.5 * self.scale, v)
        return v

    @property
    def norm(self) -> float:
        if self.kind == "table":
            return self.scale * self.table.sup
        return self.scale

    @property
    def jump(self) -> float | None:
        """Location of an interior discontinuity, if any."""
        return self.x0 if self.kind == "indicator" else None


# ---------------------------------------------------------------------------
# numerics and the model itself

_NUMERIC_DEFAULTS = {"h": 0.01, "T": 12.0, "tail_q": 1e-10, "tol": 1e-10, "max_iter": 10000}

_SIM_DEFAULTS = {
    "obs_times": [1.0, 2.0, 3.0, 4.0, 5.0],
    "max_pop": 1_000_000,
    "first_moment_times": [2.0, 4.0, 5.0, 6.0, 8.0],
    "distributional_t": 10.0,
    "variance_t": 4.0,
    "clt_t": 8.0,
    "clt_s0": 2.0,
}


@dataclass(frozen=True)
class NumericsConfig:
    h: float = 0.01
    T: float = 12.0
    tail_q: float = 1e-10
    tol: float = 1e-10
    max_iter: int = 10000

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigError("numerics.h must be > 0")
        if not self.T >= self.h:
            raise ConfigError("numerics.T must be >= h")
        if not 0 < self.tail_q < 1e-3:
            raise ConfigError("numerics.tail_q must lie in (0, 1e-3)")
        if not self.tol > 0:
            raise ConfigError("numerics.tol must be > 0")
        if self.max_iter < 1:
            raise ConfigError("numerics.max_iter must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.h))

    @classmethod
    def from_config(cls, doc) -> "NumericsConfig":
        doc = {} if doc is None else doc
        _expect_keys(doc, "numerics", (), tuple(_NUMERIC_DEFAULTS))
        kw = {}
        for k, v in doc.items():
            kw[k] = int(_number(v, f"numerics.{k}", integer=True)) if k == "max_iter" \
                else _number(v, f"numerics.{k}")
        return cls(**kw)

    def to_config(self) -> dict:
        return {"h": self.h, "T": self.T, "tail_q": self.tail_q, "tol": self.tol,
                "max_iter": self.max_iter}


def _sim_from_config(doc) -> dict:
    doc = {} if doc is None else doc
    _expect_keys(doc, "sim", (), tuple(_SIM_DEFAULTS))
    out = dict(_SIM_DEFAULTS)
    for k, v in doc.items():
        if k in ("obs_times", "first_moment_times"):
            if not isinstance(v, list) or not v:
                raise ConfigError(f"sim.{k}: expected a non-empty list")
            vals = [_number(x, f"sim.{k}", lo=0.0) for x in v]
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigError(f"sim.{k}: must be increasing")
            out[k] = vals
        elif k == "max_pop":
            out[k] = int(_number(v, "sim.max_pop", lo=1.0, integer=True))
        else:
            out[k] = _number(v, f"sim.{k}", lo=0.0, lo_open=True)
    return out


@dataclass(frozen=True)
class ModelSpec:
    alpha: RateFunction
    offspring: OffspringLaw
    lifetime: LifetimeDistribution
    f: TestFunction
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    sim: dict = field(default_factory=lambda: dict(_SIM_DEFAULTS), compare=False)

    def to_config(self) -> dict:
        return {
            "alpha": self.alpha.to_config(),
            "offspring": self.offspring.to_config(),
            "lifetime": self.lifetime.to_config(),
            "f": self.f.to_config(),
            "numerics": self.numerics.to_config(),
            "sim": self.sim,
        }

    @cached_property
    def spec_hash(self) -> str:
        canon = json.dumps(self.to_config(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_f(self, f: TestFunction) -> "ModelSpec":
        return replace(self, f=f)

    def with_numerics(self, **kw) -> "ModelSpec":
        return replace(self, numerics=replace(self.numerics, **kw))

    @property
    def x_max(self) -> float:
        """Truncated lifetime support, rounded up to a multiple of h."""
        h = self.numerics.h
        upper = self.lifetime.upper(self.numerics.tail_q)
        return h * math.ceil(upper / h - 1e-9)

    @cached_property
    def disc(self):
        from .grids import Discretization
        return Discretization(self)

    def __getstate__(self):
        # cached grids are rebuilt on demand in worker processes
        state = dict(self.__dict__)
        state.pop("disc", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)


def build_model(config: dict) -> ModelSpec:
    """Construct a :class:`ModelSpec` from a parsed configuration document."""
    _expect_keys(config, "config", ("alpha", "offspring", "lifetime", "f"), ("numerics", "sim"))
    return ModelSpec(
        alpha=RateFunction.from_config(config["alpha"]),
        offspring=OffspringLaw.from_config(config["offspring"]),
        lifetime=LifetimeDistribution.from_config(config["lifetime"]),
        f=TestFunction.from_config(config["f"]),
        numerics=NumericsConfig.from_config(config.get("numerics")),
        sim=_sim_from_config(config.get("sim")),
    )


def load_config(path) -> ModelSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return build_model(doc)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""

    def to_dict(self):
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "pass": self.passed, "note": self.note}


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    m: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name) -> Check:
        return next(c for c in self.checks if c.name == name)

    def to_dict(self):
        return {"pass": self.passed, "m": self.m, "checks": [c.to_dict() for c in self.checks]}


def _validation_grid(spec: ModelSpec) -> np.ndarray:
    x = np.linspace(0.0, spec.x_max, 2001)
    extra = np.concatenate([spec.alpha.knots, spec.offspring.knots])
    return np.unique(np.concatenate([x, extra[extra <= spec.x_max]]))


def validate(spec: ModelSpec) -> ValidationReport:
    """Report on the moment hypotheses and on supercriticality.  Never raises."""
    x = _validation_grid(spec)
    off = spec.offspring
    checks = []

    def add(name, value, threshold, ok, note=""):
        checks.append(Check(name, float(value), float(threshold), bool(ok), note))

    mass_err = float(np.max(np.abs(off.pmf_mass(x) - 1.0)))
    add("pmf_normalized", mass_err, 1e-12, mass_err <= 1e-12, "max |sum_n p(x,n) - 1|")
    sup_gp1 = float(np.max(off.gp1(x)))
    add("sup_gp1", sup_gp1, math.inf, math.isfinite(sup_gp1), "mean offspring bounded")
    beta = float(np.max(spec.alpha.raw(x) * off.gp1(x)))
    add("beta", beta, math.inf, math.isfinite(beta), "sup alpha*gp1")
    nlogn = float(np.max(off.nlogn_moment(x)))
    add("sup_nlogn", nlogn, math.inf, math.isfinite(nlogn), "sup sum n|log n| p(x,n)")
    sup_gpp1 = float(np.max(off.gpp1(x)))
    add("sup_gpp1", sup_gpp1, math.inf, math.isfinite(sup_gpp1), "second factorial moment bounded")
    try:
        m = mean_total_offspring(spec)
    except (ValueError, FloatingPointError) as exc:
        m = math.nan
        add("supercritical", m, 1.0, False, str(exc))
    else:
        add("supercritical", m, 1.0, m > 1.0, "m > 1")
    return ValidationReport(tuple(checks), m)


def mean_total_offspring(spec: ModelSpec) -> float:
    """m = int G(dx) int_0^x alpha(u) gp1(u) du."""
    from .quadrature import cumtrapz, richardson, trapezoid_weights

    def total(grid):
        inner = cumtrapz(grid.kappa, grid.step)
        w = trapezoid_weights(grid.n, grid.step)
        return float(np.dot(w, grid.dens * inner))

    d = spec.disc
    m = richardson(total(d.fine), total(d.coarse))
    if not math.isfinite(m):
        raise ValueError("mean offspring quadrature is not finite")
    return float(m)
