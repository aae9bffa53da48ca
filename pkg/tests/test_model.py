import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import EXPBASE, EXPPOIS, config
from rlbranch import ConfigError, build_model, mean_total_offspring, validate
from rlbranch.model import LifetimeDistribution, OffspringLaw, RateFunction, TestFunction


def test_expbase_builds(expbase):
    assert expbase.alpha.sup == 2.0
    assert expbase.offspring.kind == "deterministic"
    assert expbase.lifetime.kind == "exponential"
    assert expbase.f.kind == "one"
    assert expbase.numerics.h == 0.01 and expbase.numerics.T == 12.0


def test_exppois_builds(exppois):
    assert exppois.offspring.kind == "poisson"


@pytest.mark.parametrize("doc, msg", [
    (config(EXPBASE, alpha={"kind": "table", "xs": [2.0, 1.0], "ys": [1.0, 1.0]}), "non-increasing"),
    (config(EXPBASE, alpha={"kind": "spline", "value": 1}), "unknown kind"),
    (config(EXPBASE, alpha={"kind": "constant", "value": -1}), ">="),
    (config(EXPBASE, extra=1), "unknown field"),
    ({k: v for k, v in EXPBASE.items() if k != "lifetime"}, "missing"),
    (config(EXPBASE, offspring={"kind": "poisson", "mean": 1, "p2": 0.1}), "unknown field"),
    (config(EXPBASE, offspring={"kind": "binary", "p0": 0.7, "p2": 0.5}), r"p0 \+ p2"),
    (config(EXPBASE, offspring={"kind": "deterministic", "n": 1.5}), "integer"),
    (config(EXPBASE, lifetime={"kind": "uniform", "lo": 2, "hi": 1}), "lo < hi"),
    (config(EXPBASE, f={"kind": "indicator"}), "missing"),
    (config(EXPBASE, numerics={"h": -0.1}), "numerics.h"),
    (config(EXPBASE, numerics={"tail_q": 0.01}), "tail_q"),
    (config(EXPBASE, sim={"obs_times": [2, 1]}), "increasing"),
])
def test_schema_errors(doc, msg):
    with pytest.raises(ConfigError, match=msg):
        build_model(doc)


def test_validate_expbase(expbase):
    rep = validate(expbase)
    assert rep.passed
    assert abs(rep.m - 2.0) < 1e-6


def test_validate_exppois(exppois):
    rep = validate(exppois)
    assert rep.passed
    assert rep.check("sup_gpp1").value == pytest.approx(1.0, abs=1e-15)
    assert math.isfinite(rep.check("sup_nlogn").value)


def test_validate_subcritical(geom_sub):
    rep = validate(geom_sub)
    assert abs(rep.m - 0.4) < 1e-6
    assert not rep.check("supercritical").passed
    assert not rep.passed


def test_mean_offspring_values(expbase, exppois, zero_rate):
    assert abs(mean_total_offspring(expbase) - 2.0) < 1e-6
    assert abs(mean_total_offspring(exppois) - 2.0) < 1e-6
    assert mean_total_offspring(zero_rate) == 0.0


def test_mean_offspring_step_halving(expbase):
    half = expbase.with_numerics(h=0.005)
    assert abs(mean_total_offspring(half) - mean_total_offspring(expbase)) < 1e-8


def test_mean_offspring_gamma_lifetime():
    # m = alpha * gp1 * E[L] for constant rate and mean
    spec = build_model(config(EXPBASE, lifetime={"kind": "gamma", "shape": 2.0, "scale": 0.75},
                              offspring={"kind": "poisson", "mean": 1.3}))
    assert abs(mean_total_offspring(spec) - 2 * 1.3 * 1.5) < 1e-6


def test_rate_table_evaluation():
    r = RateFunction.from_config({"kind": "table", "xs": [1.0, 2.0], "ys": [0.0, 4.0]})
    assert r.sup == 4.0
    assert np.allclose(r([-1.0, 0.0, 0.5, 1.5, 3.0]), [0.0, 0.0, 0.0, 2.0, 4.0])


LAWS = [
    {"kind": "deterministic", "n": 2},
    {"kind": "poisson", "mean": 1.7},
    {"kind": "binary", "p0": 0.2, "p2": 0.5},
    {"kind": "geometric", "mean": 1.3},
    {"kind": "poisson", "mean": {"xs": [0.5, 3.0], "ys": [0.5, 2.5]}},
    {"kind": "binary", "p0": {"xs": [1.0], "ys": [0.1]}, "p2": {"xs": [1.0, 2.0], "ys": [0.3, 0.6]}},
]


@pytest.mark.parametrize("doc", LAWS)
def test_offspring_generating_function(doc):
    law = OffspringLaw.from_config(doc)
    x = np.linspace(0.01, 5, 50)
    assert np.all(law.g(x, 1.0) == 1.0)
    z = np.linspace(0, 1, 41)
    for xi in (0.3, 1.4, 4.0):
        g = law.g(xi, z)
        assert np.all(np.diff(g) >= -1e-15)
        assert np.all(np.diff(g, 2) >= -1e-12)
    assert np.max(np.abs(law.pmf_mass(x) - 1.0)) <= 1e-12


@pytest.mark.parametrize("doc", LAWS)
def test_offspring_moments_match_pmf(doc):
    law = OffspringLaw.from_config(doc)
    for xi in (0.3, 1.4, 4.0):
        n = np.arange(0, law.support_max(np.array([xi])) + 1)
        p = law.pmf(xi, n)
        assert np.dot(n, p) == pytest.approx(float(law.gp1(xi)), rel=1e-10)
        assert np.dot(n * (n - 1), p) == pytest.approx(float(law.gpp1(xi)), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("doc", LAWS)
def test_offspring_sampler_mean(doc):
    law = OffspringLaw.from_config(doc)
    rng = np.random.default_rng(7)
    for xi in (0.4, 2.2):
        draws = law.sample(rng, np.full(100_000, xi))
        se = draws.std() / math.sqrt(draws.size)
        target = float(law.gp1(xi))
        if se == 0:
            assert draws.mean() == target
        else:
            assert abs(draws.mean() - target) < 4 * se


LIFETIMES = [
    {"kind": "exponential", "rate": 1.3},
    {"kind": "gamma", "shape": 2.5, "scale": 0.6},
    {"kind": "uniform", "lo": 0.5, "hi": 2.0},
    {"kind": "weibull", "shape": 1.5, "scale": 1.2},
]


@pytest.mark.parametrize("doc", LIFETIMES)
def test_lifetime_sampler_ks(doc):
    life = LifetimeDistribution.from_config(doc)
    x = life.sample(np.random.default_rng(3), 100_000)
    d = stats.kstest(x, life.cdf).statistic
    assert d < 1.36 / math.sqrt(1e5) * 1.5
    assert np.all(x > 0)


@pytest.mark.parametrize("doc", LIFETIMES)
def test_lifetime_quantile_inverts_cdf(doc):
    life = LifetimeDistribution.from_config(doc)
    lo, hi = life.quantile(1e-6), life.quantile(1 - 1e-6)
    x = np.linspace(lo, hi, 200)
    assert np.max(np.abs(life.quantile(life.cdf(x)) - x)) < 1e-9
    assert life.cdf(0.0) == 0.0


@settings(max_examples=50)
@given(kind=st.sampled_from(["one", "indicator", "expdecay"]),
       x=st.floats(-5, 20, allow_nan=False))
def test_test_function_bounds(kind, x):
    doc = {"kind": kind}
    if kind == "indicator":
        doc["x"] = 1.0
    if kind == "expdecay":
        doc["rate"] = 0.7
    f = TestFunction.from_config(doc)
    v = float(f(x))
    assert 0.0 <= v <= f.norm
    if x <= 0:
        assert v == 0.0


def test_spec_hash_is_canonical():
    a = build_model(EXPBASE)
    b = build_model(dict(reversed(list(EXPBASE.items()))))
    assert a.spec_hash == b.spec_hash
    assert a.spec_hash != build_model(EXPPOIS).spec_hash
