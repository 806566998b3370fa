import csv
import math

import numpy as np
import pytest

from mstage import harness as hn
from mstage import multistage as ms
from mstage.fss import FssSolver, SimBudget, design_fss
from mstage.models import Ar1, GaussianMean, ModelSpec, Statistic

GAUSS = ModelSpec(GaussianMean(0.5))


@pytest.fixture(scope="module")
def three_design():
    return ms.design_three_stage(GAUSS, 1e-4, 1e-4)


def test_fss_test_honors_its_level():
    d = design_fss(GAUSS, 0.05, 0.05)
    report = hn.evaluate(d, GAUSS, GAUSS.mu0, reps=10_000, seed=5)
    assert report.test == "fss"
    assert report.reject_rate <= 0.05 + 3 * report.reject_se
    assert report.ess == d.n_star


def test_seeded_evaluation_is_reproducible(three_design):
    a = hn.evaluate(three_design, GAUSS, 0.1, reps=3000, seed=9)
    b = hn.evaluate(three_design, GAUSS, 0.1, reps=3000, seed=9)
    assert a == b


def test_thread_count_does_not_change_results(three_design):
    a = hn.evaluate(three_design, GAUSS, 0.1, reps=5000, seed=9, threads=1)
    b = hn.evaluate(three_design, GAUSS, 0.1, reps=5000, seed=9, threads=4)
    assert a.ess == b.ess
    assert a.reject_rate == b.reject_rate
    sp = ms.design_sprt(1e-3, 1e-3)
    ra = hn.evaluate(sp, GAUSS, 0.0, reps=5000, seed=10, threads=1)
    rb = hn.evaluate(sp, GAUSS, 0.0, reps=5000, seed=10, threads=3)
    assert ra.ess == rb.ess


def test_stage_frequencies_sum_to_one(three_design):
    report = hn.evaluate(three_design, GAUSS, 0.05, reps=4000, seed=3)
    assert abs(sum(report.stage_freqs.values()) - 1.0) <= 1e-12
    assert min(report.stage_freqs) >= 1
    assert report.ess <= three_design.n_final
    assert report.ess >= min(three_design.n_accept, three_design.n_reject)


# ---------------------------------------------------------------------------
# exact Gaussian oracle


def test_exact_ess_degenerate_equal_stages():
    from scipy.stats import norm

    d = ms.ThreeStageDesign(1e-3, 1e-3, 20, 20, 50, -0.2, 0.2, 0.0,
                            gamma=0.1, delta=0.1)
    mu = 0.05
    got = hn.gaussian_exact_ess(d, GAUSS, mu)
    # statistic is the average LLR: T = S/n on the sum scale
    sd = math.sqrt(20)
    z0 = (20 * (-0.2) - 20 * mu) / sd
    z1 = (20 * 0.2 - 20 * mu) / sd
    joint = norm.cdf(z1) - norm.cdf(z0)
    assert got == pytest.approx(20 + 30 * joint, abs=1e-10)


def test_exact_ess_matches_quadrature_refinement(three_design):
    # the oracle should be insensitive to the integration discretization
    base = hn.gaussian_exact_ess(three_design, GAUSS, 0.07)
    nodes = np.polynomial.legendre.leggauss(128)
    finer = np.polynomial.legendre.leggauss(256)
    orig = np.polynomial.legendre.leggauss

    def fake(n):
        return finer if n == 128 else orig(n)

    np.polynomial.legendre.leggauss = fake
    try:
        refined = hn.gaussian_exact_ess(three_design, GAUSS, 0.07)
    finally:
        np.polynomial.legendre.leggauss = orig
    assert abs(base - refined) <= 1e-8


def test_exact_ess_against_monte_carlo(three_design):
    for mu, seed in ((GAUSS.mu0, 15), (0.0, 16)):
        exact = hn.gaussian_exact_ess(three_design, GAUSS, mu)
        mc = hn.evaluate(three_design, GAUSS, mu, reps=10_000, seed=seed)
        assert abs(mc.ess - exact) <= 3 * mc.ess_se


def test_exact_ess_unequal_stage_orderings():
    # both orderings of the early checkpoints are covered by the identity
    rng = np.random.default_rng(2)
    for trial in range(4):
        n0, n1 = sorted(rng.integers(5, 30, size=2))
        if trial % 2:
            n0, n1 = n1, n0
        d = ms.ThreeStageDesign(
            1e-3, 1e-3, int(n0), int(n1), 45,
            -abs(rng.normal(0.2, 0.05)), abs(rng.normal(0.2, 0.05)), 0.0,
            gamma=0.1, delta=0.1)
        mu = float(rng.uniform(-0.3, 0.3))
        exact = hn.gaussian_exact_ess(d, GAUSS, mu)
        mc = hn.evaluate(d, GAUSS, mu, reps=10_000, seed=100 + trial)
        assert abs(mc.ess - exact) <= 3 * max(mc.ess_se, 1e-3)


def test_exact_ess_requires_gaussian():
    d = ms.ThreeStageDesign(1e-3, 1e-3, 5, 6, 20, -0.1, 0.1, 0.0, 0.1, 0.1)
    with pytest.raises(Exception):
        hn.gaussian_exact_ess(d, ModelSpec(Ar1(-0.5, 0.5)), 0.0)


# ---------------------------------------------------------------------------
# regimes and CSV contract


def test_regime_alpha_mappings():
    spec = hn.RegimeSpec(hn.Regime.POWER4, (0.1,))
    assert spec.alpha_of(0.1) == pytest.approx(1e-4)
    spec = hn.RegimeSpec(hn.Regime.LOG_POWER, (0.01,))
    assert spec.alpha_of(0.01) == pytest.approx(math.exp(-abs(math.log(0.01)) ** 1.5))
    spec = hn.RegimeSpec(hn.Regime.LOG_OVER_BETA, (0.01,))
    expect = math.exp(-abs(math.log(0.01)) / 0.01 ** 0.08)
    assert spec.alpha_of(0.01) == pytest.approx(expect)


def test_regime_rejects_degenerate_alpha():
    with pytest.raises(ValueError):
        hn.RegimeSpec(hn.Regime.EQUAL, (1.5,))


def test_sweep_rows_and_ratio_columns(tmp_path):
    spec = hn.RegimeSpec(hn.Regime.EQUAL, (0.1, 0.05))
    budget = SimBudget(reps=2000, seed=7)
    solvers = {}

    def design_fn(kind, a, b):
        if kind == "sprt":
            return ms.design_sprt(a, b)
        key = (a, b)
        solvers.setdefault(key, FssSolver(GAUSS, budget))
        return ms.design_three_stage(GAUSS, a, b, budget, solvers[key])

    rows = hn.sweep(spec, GAUSS, ["three", "sprt"], design_fn, reps=2000,
                    seed=7)
    assert len(rows) == 4
    for row in rows:
        assert row["regime"] == "equal"
        assert float(row["ratio"]) > 0
        assert row["ess_se"] != ""
    sprt_rows = [r for r in rows if r["test"] == "sprt"]
    assert all(float(r["ratio"]) == 1.0 for r in sprt_rows)
    path = tmp_path / "sweep.csv"
    hn.write_csv(path, rows, hn.SWEEP_COLUMNS)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    assert header == hn.SWEEP_COLUMNS


def test_csv_column_contract(tmp_path, three_design):
    report = hn.evaluate(three_design, GAUSS, GAUSS.mu0, reps=1000, seed=1)
    row = hn.report_row(report)
    assert list(row.keys()) == hn.CSV_COLUMNS
    path = tmp_path / "r.csv"
    hn.write_csv(path, [row])
    parsed = list(csv.DictReader(open(path)))
    assert parsed[0]["test"] == "three"
    assert parsed[0]["model"] == "gaussian"
    assert parsed[0]["bound_lower"] != ""  # at the design point


def test_robustness_shape_outside_design_interval(three_design):
    # far below the null design point the SPRT stops sooner than every
    # multistage test, reversing the midpoint ordering
    mu = GAUSS.mu0 - 0.2
    sprt = hn.evaluate(ms.design_sprt(1e-4, 1e-4), GAUSS, mu, reps=6000,
                       seed=41)
    solver = FssSolver(GAUSS)
    for design in (three_design,
                   ms.design_four_stage_hat(GAUSS, 1e-4, 1e-4, solver=solver),
                   ms.design_four_stage_check(GAUSS, 1e-4, 1e-4,
                                              solver=solver)):
        multi = hn.evaluate(design, GAUSS, mu, reps=6000, seed=42)
        slack = 3 * math.hypot(sprt.ess_se, multi.ess_se)
        assert sprt.ess <= multi.ess + slack


def test_bounds_attached_only_at_design_points(three_design):
    at_null = hn.evaluate(three_design, GAUSS, GAUSS.mu0, reps=500, seed=2)
    away = hn.evaluate(three_design, GAUSS, 0.1, reps=500, seed=2)
    assert at_null.bound_lower is not None
    assert away.bound_lower is None
