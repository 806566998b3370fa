import math

import numpy as np
import pytest
from scipy.stats import norm

from mstage import ratefn as rt
from mstage.errors import NotApplicableError, RangeError
from mstage.models import (
    Ar1,
    GaussianMean,
    Hypothesis,
    ModelSpec,
    Statistic,
    TwoStateMarkov,
    bernoulli_kl,
)

GAUSS = ModelSpec(GaussianMean(0.5))
GAUSS_MEAN = ModelSpec(GaussianMean(0.5), Statistic.SAMPLE_MEAN)
BINARIZED = ModelSpec(GaussianMean(0.5), Statistic.BINARIZED)
AR1 = ModelSpec(Ar1(-0.5, 0.5))
YW = ModelSpec(Ar1(-0.5, 0.5), Statistic.YULE_WALKER)
MARKOV = ModelSpec(TwoStateMarkov(0.5, 0.25, 0.75))
MARKOV_MEAN = ModelSpec(TwoStateMarkov(0.5, 0.25, 0.75), Statistic.SAMPLE_MEAN)

NUMERIC_CUM_MODELS = [GAUSS, GAUSS_MEAN, BINARIZED, AR1, MARKOV, MARKOV_MEAN]


# ---------------------------------------------------------------------------
# cumulant limits


@pytest.mark.parametrize("model", NUMERIC_CUM_MODELS,
                         ids=lambda m: f"{type(m.kind).__name__}-{m.statistic.value}")
def test_cumulant_vanishes_at_zero(model):
    for hyp in (Hypothesis.P0, Hypothesis.P1):
        cum = rt.cumulant_limit(model, hyp)
        assert abs(cum(0.0)) <= 1e-10


@pytest.mark.parametrize("model", [GAUSS, AR1, MARKOV])
def test_llr_cumulant_roots_and_shift(model):
    c0 = rt.cumulant_limit(model, Hypothesis.P0)
    c1 = rt.cumulant_limit(model, Hypothesis.P1)
    assert abs(c0(1.0)) <= 1e-10
    assert abs(c1(-1.0)) <= 1e-10
    for theta in np.linspace(-0.9, 0.1, 7):
        assert c1(theta) == pytest.approx(c0(theta + 1.0), abs=1e-9)


@pytest.mark.parametrize("model", NUMERIC_CUM_MODELS,
                         ids=lambda m: f"{type(m.kind).__name__}-{m.statistic.value}")
def test_cumulant_strictly_convex_on_probe_grid(model):
    cum = rt.cumulant_limit(model, Hypothesis.P0)
    lo = max(cum.theta_lo, -2.0)
    hi = min(cum.theta_hi, 2.0)
    grid = np.linspace(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo), 41)
    vals = np.array([cum(t) for t in grid])
    assert np.all(np.isfinite(vals))
    second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
    assert np.all(second > 0)


def test_ar1_domain_matches_hand_computation():
    # with mu = -0.5 and coefficients +-0.5 the admissible interval is
    # (-1/8, 9/8): p is constant 1.25 and the middle set needs |q| < 5/8
    cum = rt.cumulant_limit(AR1, Hypothesis.P0)
    assert cum.theta_lo == pytest.approx(-0.125, abs=1e-9)
    assert cum.theta_hi == pytest.approx(1.125, abs=1e-9)
    assert math.isinf(cum(-0.2))
    assert math.isfinite(cum(0.5))


def test_markov_perron_root_at_zero_tilt():
    mat = rt._markov_pair_matrix(0.5, 0.75)
    assert rt.perron_root(mat) == pytest.approx(1.0, abs=1e-10)


# ---------------------------------------------------------------------------
# legendre transform


def test_legendre_gaussian_value():
    c0 = rt.cumulant_limit(GAUSS, Hypothesis.P0)
    assert rt.legendre(c0, 0.0) == pytest.approx(0.125, abs=1e-9)


def test_legendre_envelope_identity():
    # at any attainable slope the conjugate equals theta*kappa - phi(theta)
    for model in (BINARIZED, MARKOV):
        cum = rt.cumulant_limit(model, Hypothesis.P0)
        for theta_hat in (0.3, 0.8):
            kappa = rt._slope(cum, theta_hat)
            expect = theta_hat * kappa - cum(theta_hat)
            assert rt.legendre(cum, kappa) == pytest.approx(expect, abs=1e-7)


def test_legendre_ar1_chernoff_point():
    c0 = rt.cumulant_limit(AR1, Hypothesis.P0)
    assert rt.legendre(c0, 0.0) == pytest.approx(math.log(math.sqrt(1.25)),
                                                 abs=1e-8)


def test_legendre_divergence_marker():
    cum = rt.cumulant_limit(BINARIZED, Hypothesis.P0)
    assert math.isinf(rt.legendre(cum, 1.5))
    assert math.isinf(rt.legendre(cum, -0.2))


# ---------------------------------------------------------------------------
# slope inversion


def test_theta_of_slope_gaussian():
    c0 = rt.cumulant_limit(GAUSS, Hypothesis.P0)
    assert rt.theta_of_slope(c0, 0.0) == pytest.approx(0.5, abs=1e-6)


def test_theta_of_slope_at_base_point():
    cum = rt.cumulant_limit(MARKOV_MEAN, Hypothesis.P0)
    base_slope = rt._slope(cum, 0.0)
    assert rt.theta_of_slope(cum, base_slope) == pytest.approx(0.0, abs=1e-8)


def test_theta_of_slope_markov_cross_check():
    cum = rt.cumulant_limit(MARKOV, Hypothesis.P0)
    theta0 = rt.theta_of_slope(cum, 0.0)
    c_from_slope = -cum(theta0)
    c_from_crossing, kappa_c = rt.chernoff_info(rt.rate_functions(MARKOV))
    assert abs(kappa_c) <= 1e-6
    assert c_from_slope == pytest.approx(c_from_crossing, abs=1e-7)


def test_theta_of_slope_range_error_names_interval():
    cum = rt.cumulant_limit(BINARIZED, Hypothesis.P0)
    with pytest.raises(RangeError, match="attainable"):
        rt.theta_of_slope(cum, 1.5)


# ---------------------------------------------------------------------------
# rate-function values


def test_gaussian_psi_closed_form():
    rf = rt.rate_functions(GAUSS)
    assert rt.psi(rf, 0, 0.0) == pytest.approx(0.125)
    assert rt.psi(rf, 1, 0.0) == pytest.approx(0.125)


def test_binarized_psi_is_bernoulli_kl():
    rf = rt.rate_functions(BINARIZED)
    j0 = norm.cdf(-0.5)
    assert rt.psi(rf, 0, j0) == pytest.approx(0.0, abs=1e-12)
    assert rt.psi(rf, 0, 0.5) == pytest.approx(bernoulli_kl(0.5, j0))


def test_yule_walker_psi_value():
    rf = rt.rate_functions(YW)
    assert rt.psi(rf, 0, 0.0) == pytest.approx(math.log(math.sqrt(1.25)))
    assert rt.psi(rf, 1, 0.0) == pytest.approx(math.log(math.sqrt(1.25)))


@pytest.mark.parametrize("model", NUMERIC_CUM_MODELS + [YW],
                         ids=lambda m: f"{type(m.kind).__name__}-{m.statistic.value}")
def test_psi_shape_invariants(model):
    rf = rt.rate_functions(model)
    span = rf.j1 - rf.j0
    grid = rf.j0 + span * (np.arange(1, 200) / 200.0)
    v0 = np.array([rt.psi(rf, 0, k) for k in grid])
    v1 = np.array([rt.psi(rf, 1, k) for k in grid])
    assert np.all(v0 >= 0) and np.all(v1 >= 0)
    # zero exactly at the own endpoint
    assert rt.psi(rf, 0, rf.j0) <= 1e-9
    assert rt.psi(rf, 1, rf.j1) <= 1e-9
    # monotone on the limit interval
    assert np.all(np.diff(v0) >= -1e-9)
    assert np.all(np.diff(v1) <= 1e-9)
    # convex: second differences bounded below
    assert np.all(v0[2:] - 2 * v0[1:-1] + v0[:-2] >= -1e-8)
    assert np.all(v1[2:] - 2 * v1[1:-1] + v1[:-2] >= -1e-8)


@pytest.mark.parametrize("model", [GAUSS, AR1, MARKOV])
def test_avg_llr_shift_identity(model):
    rf = rt.rate_functions(model)
    span = rf.j1 - rf.j0
    for k in np.linspace(rf.j0 + 0.05 * span, rf.j1 - 0.05 * span, 25):
        assert abs(rt.psi(rf, 1, k) - (rt.psi(rf, 0, k) - k)) <= 1e-7


@pytest.mark.parametrize("model", [GAUSS, GAUSS_MEAN, BINARIZED])
def test_numeric_legendre_matches_closed_form(model):
    rf = rt.rate_functions(model)
    c0, c1 = rf.cumulants
    span = rf.j1 - rf.j0
    for k in np.linspace(rf.j0 + 0.02 * span, rf.j1 - 0.02 * span, 40):
        assert abs(rt.legendre(c0, k) - rt.psi(rf, 0, k)) <= 1e-6
        assert abs(rt.legendre(c1, k) - rt.psi(rf, 1, k)) <= 1e-6


# ---------------------------------------------------------------------------
# chernoff information


def test_chernoff_binarized_value():
    rf = rt.rate_functions(BINARIZED)
    c, kappa_c = rt.chernoff_info(rf)
    j0 = norm.cdf(-0.5)
    j1 = norm.cdf(0.5)
    assert c == pytest.approx(-math.log(math.sqrt(4 * j0 * j1)), abs=1e-6)
    assert c == pytest.approx(0.0793, abs=1e-4)


def test_chernoff_ar1_four_routes_agree():
    closed = 0.5 * math.log(1.25)
    rf = rt.rate_functions(AR1)
    c_cross, kappa_c = rt.chernoff_info(rf)
    c_min_phi = rt.legendre(rf.cumulants[0], 0.0)
    rf_yw = rt.rate_functions(YW)
    c_yw = rt.psi(rf_yw, 0, 0.0)
    for val in (c_cross, c_min_phi, c_yw):
        assert val == pytest.approx(closed, abs=1e-7)
    assert abs(kappa_c) <= 1e-6


def test_chernoff_gaussian_consistency_with_min_cumulant():
    # kappa_c = 0 and C = -inf phi0 for the likelihood-ratio statistic
    rf = rt.rate_functions(GAUSS)
    c, kappa_c = rt.chernoff_info(rf)
    assert abs(kappa_c) <= 1e-7
    assert c == pytest.approx(0.125, abs=1e-7)
    assert c == pytest.approx(rt.legendre(rf.cumulants[0], 0.0), abs=1e-7)


# ---------------------------------------------------------------------------
# g inverse


def test_g_inverse_crossing_at_unit_ratio():
    rf = rt.rate_functions(BINARIZED)
    _, kappa_c = rt.chernoff_info(rf)
    assert rt.g_inverse(rf, 1.0) == pytest.approx(kappa_c, abs=1e-6)


def test_g_inverse_gaussian_algebra():
    rf = rt.rate_functions(GAUSS)
    assert rt.g_inverse(rf, 4.0) == pytest.approx(0.5 / 3, abs=1e-7)


def test_g_inverse_endpoint_behavior():
    rf = rt.rate_functions(BINARIZED)
    k = rt.g_inverse(rf, 1e-8)
    assert k == pytest.approx(rf.j0, abs=1e-3)


@pytest.mark.parametrize("model", [BINARIZED, AR1])
def test_g_of_g_inverse_round_trip(model):
    rf = rt.rate_functions(model)
    for r in (0.1, 0.5, 1.0, 2.0, 10.0):
        k = rt.g_inverse(rf, r)
        got = rt.psi(rf, 0, k) / rt.psi(rf, 1, k)
        assert abs(got - r) <= 1e-7 * max(1.0, r)


# ---------------------------------------------------------------------------
# relative efficiencies


def test_are_binarized_values():
    rf = rt.rate_functions(BINARIZED)
    a0, a1 = rt.are(rf)
    assert a0 == pytest.approx(a1)
    assert a0 == pytest.approx(0.6180, abs=1e-3)


def test_are_small_threshold_limit():
    rf = rt.rate_functions(ModelSpec(GaussianMean(0.05), Statistic.BINARIZED))
    a0, _ = rt.are(rf)
    assert abs(a0 - 2 / math.pi) / (2 / math.pi) <= 0.01


def test_are_yule_walker_symmetric():
    rf = rt.rate_functions(YW)
    a0, a1 = rt.are(rf)
    i0 = 1.0 / (2 * 0.75)
    expect = 0.5 * math.log((1 + 0.25 + 0.5) / 0.75) / i0
    assert a0 == pytest.approx(expect, abs=1e-9)
    assert a1 == pytest.approx(expect, abs=1e-9)


def test_are_rejects_llr_statistic():
    with pytest.raises(NotApplicableError):
        rt.are(rt.rate_functions(GAUSS))
