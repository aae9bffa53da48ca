import math

import pytest

from rlbranch import check_clt, check_distributional, check_first_moments, check_variance
from rlbranch.verify import CheckReport, suite_passed


@pytest.fixture(scope="module")
def dist_reports(expbase, sol_base):
    return {r.name: r for r in check_distributional(expbase, sol_base, 3.0, 400, 17)}


def test_laplace_at_zero_is_exact(dist_reports):
    r = dist_reports["laplace_W[theta=0]"]
    assert r.estimate == 1.0 and r.target == pytest.approx(1.0, abs=1e-12)
    assert r.statistic == 0.0 and r.passed


def test_distributional_report_shape(dist_reports):
    assert "age_profile_A_f" in dist_reports and "extinct_by_t" in dist_reports
    assert dist_reports["gf_xi1_poisson[s=0.3]"].diagnostic
    assert not dist_reports["gf_xi1_compound[s=0.3]"].diagnostic
    for r in dist_reports.values():
        d = r.to_dict()
        assert "pass" in d and "passed" not in d
        assert d["seeds"]["master"] == 17


def test_standard_error_scaling(expbase, sol_base):
    small = check_first_moments(expbase, sol_base, [2.0], 500, 3)[0]
    big = check_first_moments(expbase, sol_base, [2.0], 2000, 3)[0]
    assert big.se / small.se == pytest.approx(0.5, rel=0.1)
    assert small.name == "mean_sum_f[t=2]"


def test_first_moments_without_births(zero_rate):
    reps = check_first_moments(zero_rate, None, [0.5, 1.0], 2000, 8)
    for r, t in zip(reps, (0.5, 1.0)):
        assert r.target == pytest.approx(math.exp(-t), abs=1e-6)
        assert r.passed
    assert reps[-1].name == "embedded_xi1_mean" and reps[-1].target == 0.0
    assert reps[-1].estimate == 0.0 and reps[-1].passed


def test_variance_without_births(zero_rate):
    r = check_variance(zero_rate, None, 1.0, 2000, 4)
    G = 1 - math.exp(-1.0)
    assert r.target == pytest.approx(G * (1 - G), abs=1e-6)
    assert r.kind == "bootstrap" and r.passed
    lo, hi = r.extra["interval"]
    assert lo <= r.estimate <= hi
    with pytest.raises(ValueError, match="1000"):
        check_variance(zero_rate, None, 1.0, 10, 4)


def test_clt_skipped_for_short_window(expbase, sol_base):
    reps = check_clt(expbase, sol_base, 6.0, 0.1, 500, 1)
    assert len(reps) == 1 and reps[0].passed and "skipped" in reps[0].note


def test_reports_are_reproducible(expbase, sol_base):
    a = [r.to_dict() for r in check_first_moments(expbase, sol_base, [1.0, 2.0], 300, 99)]
    b = [r.to_dict() for r in check_first_moments(expbase, sol_base, [1.0, 2.0], 300, 99)]
    assert a == b


def test_first_moments_sample_floor(expbase, sol_base):
    with pytest.raises(ValueError, match="100"):
        check_first_moments(expbase, sol_base, [1.0], 50, 1)


def test_suite_passed_ignores_diagnostics():
    ok = CheckReport("a", 1, 1, 0.0, 0.0, 0.0, 0.0, 4.0, True)
    diag = CheckReport("b", 1, 1, 0.0, 0.0, 0.0, 9.0, 4.0, False, diagnostic=True)
    bad = CheckReport("c", 1, 1, 0.0, 1.0, 0.1, 10.0, 4.0, False)
    assert suite_passed([ok, diag])
    assert not suite_passed([ok, bad])
