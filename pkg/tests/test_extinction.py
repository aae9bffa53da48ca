import math

import numpy as np
import pytest

import oracle_values as ov
from conftest import EXPBASE, config
from rlbranch import (
    build_model, extinction_curve, extinction_prob, laplace_march, laplace_Y, limit_functionals,
    offspring_total_gf, phi_limit, psi_fun,
)
from rlbranch.extinction import laplace_values
from rlbranch.model import TestFunction

THETAS = [0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0]


@pytest.fixture(scope="module")
def phi_base(expbase, sol_base):
    return phi_limit(expbase, sol_base)


def test_gf_examples(expbase, exppois):
    # Geom total offspring with mean 2: 1 / (1 + 2(1 - s))
    for s in (0.0, 0.3, 0.7, 1.0):
        assert offspring_total_gf(expbase, s) == pytest.approx(1 / (1 + 2 * (1 - s)), abs=1e-8)
    assert offspring_total_gf(expbase, 1.0) == pytest.approx(1.0, abs=1e-12)
    # poisson offspring: compound with inner exp(s - 1)
    s = 0.4
    assert offspring_total_gf(exppois, s) == pytest.approx(1 / (1 + 2 * (1 - math.exp(s - 1))),
                                                           abs=1e-8)
    assert offspring_total_gf(exppois, s, mode="poisson") == pytest.approx(1 / (1 + 2 * (1 - s)),
                                                                         abs=1e-8)


@pytest.mark.parametrize("s", [-0.1, 1.5])
def test_gf_domain(expbase, s):
    with pytest.raises(ValueError, match="s must lie"):
        offspring_total_gf(expbase, s)


def test_gf_bad_mode(expbase):
    with pytest.raises(ValueError, match="mode"):
        offspring_total_gf(expbase, 0.5, mode="other")


def test_extinction_examples(expbase, exppois, geom_sub):
    r = extinction_prob(expbase)
    assert abs(r.q - ov.Q_EXPBASE) < 1e-8
    assert r.fixed_point_residual < 1e-9
    rp = extinction_prob(exppois)
    assert abs(rp.q - ov.Q_EXPPOIS) < 1e-8
    assert abs(rp.q_poisson - 0.5) < 1e-8
    assert extinction_prob(geom_sub).q == 1.0


def test_extinction_no_births(zero_rate):
    assert extinction_prob(zero_rate).q == 1.0


def test_extinction_curve(expbase):
    res = extinction_curve(expbase)
    qt = res.q_curve["q_t"]
    assert qt[0] == 0.0
    assert np.all(np.diff(qt) >= -1e-12)
    assert np.all(qt <= res.q + 1e-9)
    assert abs(qt[-1] - res.q) < 1e-4
    # birth-death: q(t) = (e^t - 1) / (2e^t - 1)
    t = 1.0
    assert res.q_curve.at("q_t", t) == pytest.approx((math.e - 1) / (2 * math.e - 1), abs=1e-4)


def test_laplace_march_trivial(expbase):
    lm = laplace_march(expbase, 0.0, horizon=2.0)
    assert np.allclose(lm.L, 1.0, atol=1e-14)
    lm = laplace_march(expbase, 0.7, horizon=2.0)
    assert lm.L[0] == pytest.approx(math.exp(-0.7), abs=1e-12)
    assert np.all((lm.L > 0) & (lm.L <= 1))
    assert lm.u(0.0, 1.0) == pytest.approx(0.7, abs=1e-12)
    with pytest.raises(ValueError, match="nonnegative"):
        laplace_march(expbase, -1.0)
    with pytest.raises(ValueError, match="exceeds"):
        laplace_march(expbase, 1.0, horizon=20.0)


def test_laplace_march_birth_death(expbase):
    # E s^{X_t}, X_t birth-death with rates 2 and 1: explicit Riccati solution
    s = math.exp(-0.5)
    t = 1.5
    e = math.exp(t)
    exact = (s * (2 - e) + (e - 1)) / (2 * s * (1 - e) + (2 * e - 1))
    lm = laplace_march(expbase, 0.5, horizon=t)
    assert lm.L[-1] == pytest.approx(exact, abs=2e-4)


def test_laplace_values_vectorized(expbase):
    th = np.array([0.0, 0.5, 2.0])
    vals = laplace_values(expbase, th, horizon=1.0)
    for k, x in enumerate(th):
        assert vals[k] == pytest.approx(laplace_march(expbase, x, horizon=1.0).L[-1], abs=1e-13)


def test_phi_matches_birth_death(phi_base):
    assert phi_base(0.0) == 1.0
    assert phi_base.converged
    err = max(abs(float(phi_base(t)) - ov.phi_expbase(t)) for t in THETAS)
    assert err < 1e-3
    p = phi_base(np.array(THETAS))
    assert np.all(np.diff(p) <= 0)
    assert np.all(p >= ov.Q_EXPBASE - 1e-6)
    assert abs(float(phi_base(100.0)) - ov.Q_EXPBASE) < 3e-3


def test_phi_slope(phi_base, expbase, sol_base):
    lim = limit_functionals(expbase, sol_base)
    # 1 - phi(theta) ~ a_f theta: extrapolate the difference quotient on two small nodes
    th = phi_base.theta
    i, j = np.searchsorted(th, [0.01, 0.02])
    d = [(1.0 - phi_base.phi[k]) / th[k] for k in (i, j)]
    slope = d[0] - (d[1] - d[0]) * th[i] / (th[j] - th[i])
    assert slope == pytest.approx(lim.a_f, rel=2e-2)
    assert phi_base.c_slope == lim.a_f


def test_phi_scaling_in_f(expbase, sol_base, phi_base):
    k = 3.0
    spec = expbase.with_f(expbase.f.scaled(k))
    thetas = [0.0, 0.1, 0.5, 1.0]
    pk = phi_limit(spec, sol_base, thetas=thetas)
    for th in thetas[1:]:
        assert float(pk(th)) == pytest.approx(ov.phi_expbase(k * th), abs=1e-3)


def test_phi_indicator_reduces_to_one(expbase, sol_base, phi_base):
    spec = expbase.with_f(TestFunction("indicator", x0=1.0))
    lim = limit_functionals(spec, sol_base)
    thetas = [0.0, 0.5, 1.0, 2.0]
    pf = phi_limit(spec, sol_base, thetas=thetas, lim=lim)
    for th in thetas[1:]:
        assert float(pf(th)) == pytest.approx(float(phi_base(lim.A_f * th)), abs=2e-3)


def test_psi_and_Y_transform(expbase, sol_base):
    assert laplace_Y(expbase, sol_base, 1.0) == pytest.approx(ov.LAPLACE_Y1_EXPBASE, abs=1e-7)
    assert laplace_Y(expbase, sol_base, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert psi_fun(expbase, sol_base, 1.0) == pytest.approx(ov.PSI1_EXPBASE, abs=1e-7)
    us = [1e-6, 1e-4, 1e-3, 5e-3, 1e-2]
    vals = [psi_fun(expbase, sol_base, u) for u in us]
    assert all(v >= 0 for v in vals)
    assert np.all(np.diff(vals) >= 0)
    assert vals[0] < 1e-5
    with pytest.raises(ValueError, match="positive"):
        psi_fun(expbase, sol_base, 0.0)


def test_gamma_lifetime_extinction_bounds():
    spec = build_model(config(EXPBASE, lifetime={"kind": "gamma", "shape": 2, "scale": 0.5}))
    q = extinction_prob(spec).q
    assert 0.0 < q < 1.0
    assert offspring_total_gf(spec, q) == pytest.approx(q, abs=1e-8)
