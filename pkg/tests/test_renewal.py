import math

import numpy as np
import pytest

import oracle_values as ov
from conftest import EXPBASE, config
from rlbranch import (
    SubcriticalError, build_model, clt_variance, limit_functionals, malthusian, mean_measure,
    mean_semigroup, repro_density, second_moment,
)
from rlbranch.model import TestFunction
from rlbranch.renewal import G_mean


@pytest.fixture(scope="module")
def base_grid(expbase, sol_base):
    return mean_measure(expbase, sol_base)


@pytest.fixture(scope="module")
def base_second(expbase, sol_base, base_grid):
    return second_moment(expbase, sol_base, base_grid)


@pytest.fixture(scope="module")
def base_lim(expbase, sol_base):
    return limit_functionals(expbase, sol_base)


def test_repro_density(expbase):
    assert abs(repro_density(expbase, 0.0) - 2.0) < 1e-6
    assert abs(repro_density(expbase, 1.0) - 2 * math.exp(-1)) < 1e-6
    assert repro_density(expbase, expbase.x_max + 1.0) == 0.0


def test_malthusian_constants(sol_base, sol_pois):
    assert abs(sol_base.alpha_tilde - ov.ALPHA_TILDE) < 1e-8
    assert abs(sol_base.c9 - ov.C9_EXPBASE) < 1e-6
    assert abs(sol_base.n1 - ov.N1_EXPBASE) < 1e-6
    assert abs(sol_pois.alpha_tilde - ov.ALPHA_TILDE) < 1e-8
    assert sol_base.residual < 1e-10


def test_malthusian_rejects_subcritical(geom_sub):
    with pytest.raises(SubcriticalError, match="regime"):
        malthusian(geom_sub)


def test_malthusian_nonexponential():
    # gamma(2, 0.5) lifetimes, constant rate 3: int e^{-a s} rho(s) ds = <G, V_a>,
    # V_a(x) = 3(1 - e^{-a x})/a, <G, e^{-a L}> = (1 + a/2)^{-2}
    spec = build_model(config(EXPBASE, alpha={"kind": "constant", "value": 3},
                              lifetime={"kind": "gamma", "shape": 2, "scale": 0.5}))
    sol = malthusian(spec)
    a = sol.alpha_tilde
    assert abs(3 * (1 - (1 + a / 2) ** -2) / a - 1) < 1e-9


def test_mean_measure_examples(expbase, base_grid):
    assert abs(base_grid.at("M_f", 1.0) - math.e) < 1e-3
    assert base_grid["M_f"][0] == pytest.approx(1.0, abs=1e-12)
    ind = expbase.with_f(TestFunction("indicator", x0=0.7))
    g = mean_measure(ind)
    assert g["M_f"][0] == pytest.approx(1 - math.exp(-0.7), abs=1e-12)
    lengths = {len(v) for v in base_grid.curves.values()}
    assert lengths == {int(round(12 / 0.01)) + 1}
    assert np.all(base_grid["M_f"] >= 0)


def test_mean_semigroup_examples(expbase, base_grid):
    assert mean_semigroup(expbase, base_grid, 0.0, 1.3) == 1.0
    v = mean_semigroup(expbase, base_grid, 1.0, 0.5)
    assert abs(v - 2 * math.e * (1 - math.exp(-0.5))) < 2e-3
    v = mean_semigroup(expbase, base_grid, 1.0, 5.0)
    assert abs(v - (1 + 2 * math.e * (1 - math.exp(-1)))) < 2e-3
    with pytest.raises(ValueError, match="horizon"):
        mean_semigroup(expbase, base_grid, 13.0, 1.0)


def test_limit_functionals_expbase(base_lim, expbase):
    assert abs(base_lim.a_f - 1.0) < 1e-6
    assert abs(base_lim.A_f - 1.0) < 1e-8
    for x in (0.5, 1.0, 2.0):
        assert abs(base_lim.A_curve(x) - (1 - math.exp(-x))) < 1e-6
        assert abs(base_lim.V_curve(x) - 2 * (1 - math.exp(-x))) < 1e-6
    assert abs(G_mean(expbase, base_lim.V_curve) - 1.0) < 1e-6
    assert np.allclose(base_lim.sigma_curve.y, base_lim.V_curve.y)
    assert abs(base_lim.A_sigma - 1.0) < 1e-6   # int 2(1 - e^{-x}) e^{-x} dx


def test_A_curve_shape(base_lim):
    x = np.linspace(0, 30, 3001)
    a = base_lim.A_curve(x)
    assert np.all(np.diff(a) >= 0)
    assert a[0] == 0.0 and base_lim.A_curve(1e-9) < 1e-8
    assert abs(base_lim.A_curve(1e6) - 1.0) < 1e-12


def test_A_of_one_is_one_for_other_law(exppois, sol_pois):
    lim = limit_functionals(exppois, sol_pois)
    assert abs(lim.A_f - 1.0) < 1e-8
    assert abs(lim.a_f - sol_pois.n1 * lim.A_f) < 1e-10


def test_key_renewal_tail(expbase, exppois, sol_base, sol_pois, base_grid, base_lim):
    for spec, sol, grid, lim in ((expbase, sol_base, base_grid, base_lim),
                                 (exppois, sol_pois, None, None)):
        grid = grid or mean_measure(spec, sol)
        lim = lim or limit_functionals(spec, sol)
        assert abs(math.exp(-sol.alpha_tilde * grid.T) * grid["M_f"][-1] - lim.a_f) < 1e-3


def test_scale_covariance(expbase, sol_base, base_grid, base_second):
    c = 2.5
    spec = expbase.with_f(expbase.f.scaled(c))
    g = mean_measure(spec, sol_base)
    sm = second_moment(spec, sol_base, g)
    lim1 = limit_functionals(expbase, sol_base)
    lim = limit_functionals(spec, sol_base)
    assert np.allclose(g["M_f"], c * base_grid["M_f"], rtol=1e-10, atol=0)
    assert np.allclose(sm.grid["Gamma_f"], c * c * base_second.grid["Gamma_f"], rtol=1e-10, atol=1e-12)
    assert lim.a_f == pytest.approx(c * lim1.a_f, rel=1e-10)
    assert lim.A_f == pytest.approx(c * lim1.A_f, rel=1e-10)


def test_gamma_renewal_closed_form(base_second):
    g = base_second.grid
    assert g["Gamma_f"][0] == 0.0
    for t in (1.0, 4.0):
        assert g.at("Gamma_f", t) == pytest.approx(ov.gamma_expbase(t), rel=1e-3)
    assert np.all(g["Gamma_f"] >= 0)


def test_variance_curve(base_second):
    g = base_second.grid
    assert g.at("Var_f", 1.0) == pytest.approx(ov.var_expbase(1.0), rel=1e-2)
    assert g.at("Var_f", 4.0) == pytest.approx(ov.VAR_EXPBASE_4, rel=1e-2)


def test_variance_other_law(exppois, sol_pois):
    sm = second_moment(exppois, sol_pois, mean_measure(exppois, sol_pois))
    assert sm.grid.at("Var_f", 4.0) == pytest.approx(ov.VAR_EXPPOIS_4, rel=1e-2)


def test_gamma_pointwise(base_second):
    assert base_second.gamma(0.0, 2.0) == 0.0
    assert np.all(base_second.gamma_profile(0) == 0.0)
    # closed form at t = 2: 4e^4(1 - e^{-2m}) - 6e^2(1 - e^{-m}), m = min(2, x)
    for x in (0.5, 1.0, 3.0):
        m = min(2.0, x)
        exact = 4 * math.e ** 4 * (1 - math.exp(-2 * m)) - 6 * math.e ** 2 * (1 - math.exp(-m))
        assert base_second.gamma(2.0, x) == pytest.approx(exact, rel=2e-3)


def test_no_births_variance_is_bernoulli(zero_rate):
    sm = second_moment(zero_rate, None, mean_measure(zero_rate))
    for t in (0.5, 1.0, 3.0):
        G = 1 - math.exp(-t)
        assert sm.grid.at("Var_f", t) == pytest.approx(G * (1 - G), abs=1e-6)
        assert sm.grid.at("Gamma_f", t) == 0.0


def test_clt_variance(expbase, sol_base, base_second, base_lim):
    cv = clt_variance(expbase, sol_base, 2.0, base_second, base_lim)
    assert cv.v_window > 0
    assert cv.v_window == pytest.approx(ov.VWINDOW_EXPBASE_S2, rel=1e-3)
    assert cv.Df == "divergent" and cv.v_limit == "divergent"
    assert len(cv.integrability_diag) >= 10
    small = clt_variance(expbase, sol_base, 0.01, base_second, base_lim)
    assert small.v_window < 1e-2 * cv.v_window
    assert clt_variance(expbase, sol_base, 0.0, base_second, base_lim).v_window == 0.0


def test_eigen_relation_short(expbase, sol_base, base_lim):
    spec = expbase.with_f(base_lim.V_curve.as_test_function())
    g = mean_measure(spec, sol_base)
    for t in (1.0, 3.0):
        for x in (0.5, 2.0):
            lhs = mean_semigroup(spec, g, t, x)
            rhs = math.exp(sol_base.alpha_tilde * t) * float(base_lim.V_curve(x))
            assert lhs == pytest.approx(rhs, rel=1e-3)
