import math

import numpy as np
import pytest

from mstage import harness as hn
from mstage import models as md
from mstage import multistage as ms
from mstage.errors import TruncatedFeedError
from mstage.fss import FssSolver, SimBudget, design_fss
from mstage.models import Ar1, GaussianMean, ModelSpec, TwoStateMarkov

GAUSS = ModelSpec(GaussianMean(0.5))
AR1 = ModelSpec(Ar1(-0.5, 0.5))
MARKOV = ModelSpec(TwoStateMarkov(0.5, 0.25, 0.75))


@pytest.fixture(scope="module")
def gauss_designs():
    solver = FssSolver(GAUSS)
    return {
        "three": ms.design_three_stage(GAUSS, 1e-4, 1e-4, solver=solver),
        "four-hat": ms.design_four_stage_hat(GAUSS, 1e-4, 1e-4, solver=solver),
        "four-check": ms.design_four_stage_check(GAUSS, 1e-4, 1e-4,
                                                 solver=solver),
    }


# ---------------------------------------------------------------------------
# design construction


def test_three_stage_gaussian_final_stage(gauss_designs):
    d = gauss_designs["three"]
    assert d.n_final == 61
    assert d.kappa_final == pytest.approx(0.0, abs=1e-12)
    assert max(d.n_accept, d.n_reject) < d.n_final
    assert d.kappa_accept <= d.kappa_reject


def test_three_stage_symmetry(gauss_designs):
    d = gauss_designs["three"]
    assert d.gamma == pytest.approx(d.delta)
    assert d.n_accept == d.n_reject
    assert d.kappa_accept == pytest.approx(-d.kappa_reject, abs=1e-12)


def test_three_stage_upper_bound_has_interior_minimizer():
    solver = FssSolver(GAUSS)
    final = solver.design(5e-5, 5e-5)

    def upper(gamma):
        n0 = solver.design(gamma, 5e-5).n_star
        return n0 + (final.n_star - n0) * gamma

    d = ms.design_three_stage(GAUSS, 1e-4, 1e-4, solver=solver)
    at_opt = upper(d.gamma)
    near_one = upper(1 - 1e-9)
    near_level = upper(5e-5 * (1 + 1e-9))
    assert near_one == pytest.approx(final.n_star, abs=1.0)
    assert near_level == pytest.approx(final.n_star, abs=1.0)
    assert at_opt < min(near_one, near_level)


def test_four_stage_hat_gaussian(gauss_designs):
    d = gauss_designs["four-hat"]
    assert d.n_final == 63
    assert 5e-5 < d.gamma2 < d.gamma < 1
    assert d.n_accept < d.n_accept2 < d.n_final
    assert d.kappa_accept2 <= d.kappa_reject


def test_four_stage_check_mirrors_hat(gauss_designs):
    dh = gauss_designs["four-hat"]
    dc = gauss_designs["four-check"]
    assert (dc.n_accept, dc.n_reject) == (dh.n_reject, dh.n_accept)
    assert dc.n_reject2 == dh.n_accept2
    assert dc.n_final == dh.n_final
    assert dc.gamma == pytest.approx(dh.delta)
    assert dc.delta == pytest.approx(dh.gamma)
    assert dc.delta2 == pytest.approx(dh.gamma2)
    assert dc.kappa_reject2 == pytest.approx(-dh.kappa_accept2, abs=1e-12)
    assert dc.kappa_accept <= dc.kappa_reject2


def test_stage_size_repair_on_forced_collision():
    assert ms.repair_stage_sizes(10, 10, 20) == (11, 20)
    assert ms.repair_stage_sizes(10, 8, 20) == (11, 20)
    assert ms.repair_stage_sizes(10, 19, 19) == (19, 20)
    assert ms.repair_stage_sizes(10, 11, 12) == (11, 12)


def test_sprt_boundaries():
    d = ms.design_sprt(1e-4, 1e-2)
    assert d.accept_boundary == pytest.approx(abs(math.log(1e-2)))
    assert d.reject_boundary == pytest.approx(abs(math.log(1e-4)))


# ---------------------------------------------------------------------------
# execution semantics


def _const_path(value, length):
    return [value] * length


def test_run_three_accept_first_stage(gauss_designs):
    d = gauss_designs["three"]
    path = _const_path(d.kappa_accept - 0.1, d.n_final)
    out = ms.run_three_stage(d, path)
    assert out.decision == ms.Decision.ACCEPT
    assert out.sample_size == d.n_accept
    assert out.stage_reached == 1


def test_run_three_fall_through_accept(gauss_designs):
    d = gauss_designs["three"]
    mid = 0.5 * (d.kappa_accept + d.kappa_reject)
    out = ms.run_three_stage(d, _const_path(mid, d.n_final))
    assert out.decision == ms.Decision.ACCEPT
    assert out.sample_size == d.n_final
    assert out.stage_reached == 2  # equal early stages collapse to one batch


def test_run_three_truncated_feed(gauss_designs):
    d = gauss_designs["three"]
    mid = 0.5 * (d.kappa_accept + d.kappa_reject)
    with pytest.raises(TruncatedFeedError):
        ms.run_three_stage(d, _const_path(mid, d.n_final - 1))


def _hat_design(n0, n1, m, nf, k0=-0.3, k1=0.3, km=0.0, kf=0.0):
    return ms.FourStageHatDesign(0.01, 0.01, n0, n1, m, nf, k0, k1, km, kf,
                                 0.2, 0.05, 0.2)


def test_run_hat_interleaving_accept_reject_mid():
    # ordering n0 <= n1 <= m: reject chance at n1, second accept at m
    d = _hat_design(5, 10, 15, 30)
    path = [0.0] * 30
    path[9] = 0.9  # T_10 above the reject threshold
    out = ms.run_four_stage_hat(d, path)
    assert (out.decision, out.sample_size, out.stage_reached) == (
        ms.Decision.REJECT, 10, 2)
    path = [0.1] * 30
    path[14] = -0.5  # survives to m, accepts there
    out = ms.run_four_stage_hat(d, path)
    assert (out.decision, out.sample_size, out.stage_reached) == (
        ms.Decision.ACCEPT, 15, 3)


def test_run_hat_interleaving_mid_before_reject():
    # ordering n0 <= m <= n1
    d = _hat_design(5, 20, 15, 30)
    path = [0.1] * 30
    path[14] = -0.5
    out = ms.run_four_stage_hat(d, path)
    assert (out.decision, out.sample_size, out.stage_reached) == (
        ms.Decision.ACCEPT, 15, 2)
    path = [0.1] * 30
    path[19] = 0.9
    out = ms.run_four_stage_hat(d, path)
    assert (out.decision, out.sample_size, out.stage_reached) == (
        ms.Decision.REJECT, 20, 3)


def test_run_hat_interleaving_reject_first():
    # ordering n1 <= n0 <= m
    d = _hat_design(10, 5, 15, 30)
    path = [0.1] * 30
    path[4] = 0.9
    out = ms.run_four_stage_hat(d, path)
    assert (out.decision, out.sample_size, out.stage_reached) == (
        ms.Decision.REJECT, 5, 1)
    path = [0.1] * 30
    path[9] = -0.5
    out = ms.run_four_stage_hat(d, path)
    assert (out.decision, out.sample_size, out.stage_reached) == (
        ms.Decision.ACCEPT, 10, 2)


def test_run_check_early_second_reject(gauss_designs):
    d = gauss_designs["four-check"]
    mid = 0.5 * (d.kappa_accept + d.kappa_reject)
    path = [mid] * d.n_final
    path[d.n_reject2 - 1] = d.kappa_reject2 + 0.1
    out = ms.run_four_stage_check(d, path)
    assert out.decision == ms.Decision.REJECT
    assert out.sample_size == d.n_reject2
    assert out.sample_size <= d.n_final


def test_hat_check_mirror_symmetry_on_paths(gauss_designs):
    dh = gauss_designs["four-hat"]
    dc = gauss_designs["four-check"]
    rng = np.random.default_rng(31)
    for _ in range(300):
        increments = rng.standard_normal(dh.n_final)
        path = np.cumsum(increments) / np.arange(1, dh.n_final + 1)
        out_h = ms.run_four_stage_hat(dh, list(path))
        out_c = ms.run_four_stage_check(dc, list(-path))
        assert out_h.sample_size == out_c.sample_size
        assert (out_h.decision == ms.Decision.ACCEPT) == (
            out_c.decision == ms.Decision.REJECT)


def test_sprt_ess_near_wald_approximations():
    # under the alternative the mean sample size tracks |log alpha| / I1,
    # inflated a little by boundary overshoot
    d = ms.design_sprt(1e-4, 1e-4)
    r1 = hn.evaluate(d, GAUSS, GAUSS.mu1, reps=4000, seed=55)
    wald = abs(math.log(1e-4)) / 0.5
    assert abs(r1.ess - wald) / wald <= 0.25


def test_run_sprt_immediate_reject():
    d = ms.design_sprt(0.01, 0.01)
    out = ms.run_sprt(d, iter([d.reject_boundary + 1.0]))
    assert (out.decision, out.sample_size) == (ms.Decision.REJECT, 1)


def test_run_sprt_walks_to_accept():
    d = ms.design_sprt(0.01, 0.01)
    out = ms.run_sprt(d, iter([-1.0, -2.0, -3.0, -4.0, -5.0]))
    assert out.decision == ms.Decision.ACCEPT
    assert out.sample_size == 5


# ---------------------------------------------------------------------------
# vectorized and scalar runners agree


@pytest.mark.parametrize("kind", ["three", "four-hat", "four-check"])
def test_vectorized_decisions_match_scalar(gauss_designs, kind):
    d = gauss_designs[kind]
    reps = 400
    rng = np.random.default_rng(17)
    x = 0.15 + rng.standard_normal((reps, d.n_final))
    paths = (2 * 0.5) * np.cumsum(x, axis=1) / np.arange(1, d.n_final + 1)
    runner = {"three": ms.run_three_stage, "four-hat": ms.run_four_stage_hat,
              "four-check": ms.run_four_stage_check}[kind]
    decide = {"three": hn._decide_three, "four-hat": hn._decide_four_hat,
              "four-check": hn._decide_four_check}[kind]
    cps = d.checkpoints()
    t_at = {n: paths[:, n - 1] for n in cps}
    vec_reject, vec_tau = decide(d, t_at)
    stages = hn._stage_numbers(cps, vec_tau)
    for i in range(reps):
        out = runner(d, list(paths[i]))
        assert (out.decision == ms.Decision.REJECT) == bool(vec_reject[i])
        assert out.sample_size == vec_tau[i]
        assert out.stage_reached == stages[i]
        assert out.sample_size <= d.n_final
        assert out.stage_reached <= (3 if kind == "three" else 4)


# ---------------------------------------------------------------------------
# bounds


def test_ess_bounds_endpoint_algebra():
    d = ms.ThreeStageDesign(0.01, 0.01, 10, 12, 40, -0.1, 0.1, 0.0,
                            gamma=0.005, delta=0.2)
    lower, upper = ms.ess_bounds(d, "null")
    assert lower == pytest.approx(10 * (1 - 0.005) + 30 * 0.0)
    assert upper == pytest.approx(10 + 30 * 0.005)


def test_ess_bounds_ordering_on_grid():
    for g in (0.1, 0.3, 0.6):
        for g2 in (0.02, 0.05):
            d = ms.FourStageHatDesign(0.01, 0.01, 10, 12, 20, 40,
                                      -0.1, 0.1, -0.05, 0.0, g, g2, 0.2)
            lower, upper = ms.ess_bounds(d, "null")
            assert lower <= upper


def test_ess_bounds_reject_sprt():
    with pytest.raises(Exception):
        ms.ess_bounds(ms.design_sprt(0.01, 0.01), "null")


def test_mc_ess_within_bounds(gauss_designs):
    for kind, d in gauss_designs.items():
        for param, which in ((GAUSS.mu0, "null"), (GAUSS.mu1, "alternative")):
            report = hn.evaluate(d, GAUSS, param, reps=10_000, seed=51)
            lower, upper = ms.ess_bounds(d, which)
            slack = 3 * report.ess_se
            assert lower - slack <= report.ess <= upper + slack, (kind, which)


# ---------------------------------------------------------------------------
# decomposition and error control


def test_reject_probability_union_bound(gauss_designs):
    d = gauss_designs["three"]
    reps = 10_000
    cps = d.checkpoints()
    t_at = hn._sim_stat_at(GAUSS, GAUSS.mu0, cps, reps, 61, "dec", 1)
    reject, _ = hn._decide_three(d, t_at)
    lhs = reject.mean()
    rhs = ((t_at[d.n_reject] > d.kappa_reject).mean()
           + (t_at[d.n_final] > d.kappa_final).mean())
    se = math.sqrt(max(lhs * (1 - lhs), 1e-9) / reps)
    assert lhs <= rhs + 3 * se


def test_accept_probability_union_bound_hat(gauss_designs):
    d = gauss_designs["four-hat"]
    reps = 10_000
    cps = d.checkpoints()
    t_at = hn._sim_stat_at(GAUSS, GAUSS.mu1, cps, reps, 62, "dec2", 1)
    reject, _ = hn._decide_four_hat(d, t_at)
    lhs = 1.0 - reject.mean()
    rhs = ((t_at[d.n_accept] <= d.kappa_accept).mean()
           + (t_at[d.n_accept2] <= d.kappa_accept2).mean()
           + (t_at[d.n_final] <= d.kappa_final).mean())
    se = math.sqrt(max(lhs * (1 - lhs), 1e-9) / reps)
    assert lhs <= rhs + 3 * se


MODELS = [GAUSS, AR1, MARKOV]
DESIGNERS = {
    "three": ms.design_three_stage,
    "four-hat": ms.design_four_stage_hat,
    "four-check": ms.design_four_stage_check,
}


@pytest.mark.parametrize("model", MODELS,
                         ids=lambda m: type(m.kind).__name__)
def test_error_control_at_one_percent(model):
    alpha = beta = 1e-2
    solver = FssSolver(model, SimBudget(seed=29))
    for kind, designer in DESIGNERS.items():
        design = designer(model, alpha, beta, solver=solver)
        r0 = hn.evaluate(design, model, model.mu0, reps=10_000, seed=71)
        r1 = hn.evaluate(design, model, model.mu1, reps=10_000, seed=72)
        assert r0.reject_rate <= alpha + 3 * max(r0.reject_se, 1e-4), kind
        type2 = 1.0 - r1.reject_rate
        assert type2 <= beta + 3 * max(r1.reject_se, 1e-4), kind


def test_pathwise_cap_across_tests(gauss_designs):
    cap = design_fss(GAUSS, 1e-4 / 3, 1e-4 / 3).n_star
    for d in gauss_designs.values():
        assert d.n_final <= cap


def test_hat_improves_null_ess_at_symmetric_levels(gauss_designs):
    r_three = hn.evaluate(gauss_designs["three"], GAUSS, GAUSS.mu0,
                          reps=10_000, seed=81)
    r_hat = hn.evaluate(gauss_designs["four-hat"], GAUSS, GAUSS.mu0,
                        reps=10_000, seed=82)
    assert r_hat.ess <= r_three.ess + 3 * math.hypot(r_hat.ess_se,
                                                     r_three.ess_se)
