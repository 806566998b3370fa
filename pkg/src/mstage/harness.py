"""Monte Carlo evaluation campaigns for designed tests.

``evaluate`` runs one designed test against replicated simulated paths and
aggregates expected sample size, rejection rate, and per-stage stopping
frequencies with standard errors.  Multistage tests are evaluated from
statistic values at their checkpoints with vectorized decision logic that
mirrors the per-path runners; the SPRT is stepped in chunks over the active
paths.  ``sweep`` drives evaluations across a grid of error levels under a
level regime and attaches ratio columns against the SPRT.  For the Gaussian
model a quadrature oracle computes the 3-stage expected sample size exactly
through the joint normality of the statistic at the first two checkpoints.

CSV column order is a contract consumed by the plotting component:
``test,model,statistic,alpha,beta,true_param,reps,ess,ess_se,reject_rate,
reject_se,bound_lower,bound_upper,seed`` with sweeps appending
``regime,ratio,ratio_se``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import streams
from .errors import NotApplicableError
from .fss import FssDesign
from .models import (
    GaussianMean,
    ModelSpec,
    Statistic,
    llr_increments,
    sim_suffstats,
    start_carry,
    stat_values,
)
from .multistage import (
    Decision,
    FourStageCheckDesign,
    FourStageHatDesign,
    SprtDesign,
    ThreeStageDesign,
    ess_bounds,
)

CSV_COLUMNS = [
    "test", "model", "statistic", "alpha", "beta", "true_param", "reps",
    "ess", "ess_se", "reject_rate", "reject_se", "bound_lower", "bound_upper",
    "seed",
]
SWEEP_COLUMNS = CSV_COLUMNS + ["regime", "ratio", "ratio_se"]

_SPRT_CHUNK = 64


def test_kind(design) -> str:
    if isinstance(design, ThreeStageDesign):
        return "three"
    if isinstance(design, FourStageHatDesign):
        return "four-hat"
    if isinstance(design, FourStageCheckDesign):
        return "four-check"
    if isinstance(design, SprtDesign):
        return "sprt"
    if isinstance(design, FssDesign):
        return "fss"
    raise TypeError(f"not a recognized design: {type(design).__name__}")


@dataclass(frozen=True)
class EvalReport:
    """Monte Carlo summary of one test at one true parameter."""

    test: str
    model: ModelSpec
    true_param: float
    reps: int
    ess: float
    ess_se: float
    reject_rate: float
    reject_se: float
    stage_freqs: Dict[int, float]
    seed: int
    alpha: float
    beta: float
    bound_lower: Optional[float] = None
    bound_upper: Optional[float] = None


class Regime(str, Enum):
    EQUAL = "equal"
    POWER4 = "power4"
    LOG_POWER = "logpower"
    LOG_OVER_BETA = "logoverbeta"


@dataclass(frozen=True)
class RegimeSpec:
    """A level regime alpha = f(beta) over a grid of beta values."""

    regime: Regime
    betas: Tuple[float, ...]

    def __post_init__(self):
        for b in self.betas:
            a = self.alpha_of(b)
            if not (0 < a < 1 and 0 < b < 1):
                raise ValueError(f"regime produces alpha={a:g} outside (0,1)")

    def alpha_of(self, beta: float) -> float:
        lb = abs(math.log(beta))
        if self.regime == Regime.EQUAL:
            return beta
        if self.regime == Regime.POWER4:
            return beta ** 4
        if self.regime == Regime.LOG_POWER:
            return math.exp(-lb ** 1.5)
        return math.exp(-lb / beta ** 0.08)


# ---------------------------------------------------------------------------
# vectorized runners


def _decide_three(d: ThreeStageDesign, t_at: Dict[int, np.ndarray]):
    t0, t1 = t_at[d.n_accept], t_at[d.n_reject]
    tf = t_at[d.n_final]
    reps = len(tf)
    reject = np.zeros(reps, dtype=bool)
    tau = np.full(reps, d.n_final, dtype=np.int64)
    open_ = np.ones(reps, dtype=bool)

    def settle(mask, is_reject, size):
        m = mask & open_
        reject[m] = is_reject
        tau[m] = size
        open_[m] = False

    if d.n_accept <= d.n_reject:
        settle(t0 <= d.kappa_accept, False, d.n_accept)
    if d.n_reject <= d.n_accept:
        settle(t1 > d.kappa_reject, True, d.n_reject)
    if d.n_accept <= d.n_reject:
        settle(t1 > d.kappa_reject, True, d.n_reject)
    else:
        settle(t0 <= d.kappa_accept, False, d.n_accept)
    settle(tf > d.kappa_final, True, d.n_final)
    return reject, tau


def _decide_four_hat(d: FourStageHatDesign, t_at: Dict[int, np.ndarray]):
    n0, n1, m = d.n_accept, d.n_reject, d.n_accept2
    t0, t1, tm = t_at[n0], t_at[n1], t_at[m]
    tf = t_at[d.n_final]
    reps = len(tf)
    reject = np.zeros(reps, dtype=bool)
    tau = np.full(reps, d.n_final, dtype=np.int64)
    open_ = np.ones(reps, dtype=bool)

    def settle(mask, is_reject, size):
        mm = mask & open_
        reject[mm] = is_reject
        tau[mm] = size
        open_[mm] = False

    if n0 <= n1:
        settle(t0 <= d.kappa_accept, False, n0)
    if n1 <= n0:
        settle(t1 > d.kappa_reject, True, n1)
    if n0 <= n1 <= m:
        settle(t1 > d.kappa_reject, True, n1)
    if n0 <= m <= n1:
        settle(tm <= d.kappa_accept2, False, m)
    if n1 <= n0:
        settle(t0 <= d.kappa_accept, False, n0)
    if n1 <= m:
        settle(tm <= d.kappa_accept2, False, m)
    if m <= n1:
        settle(t1 > d.kappa_reject, True, n1)
    settle(tf > d.kappa_final, True, d.n_final)
    return reject, tau


def _decide_four_check(d: FourStageCheckDesign, t_at: Dict[int, np.ndarray]):
    n0, n1, m = d.n_accept, d.n_reject, d.n_reject2
    t0, t1, tm = t_at[n0], t_at[n1], t_at[m]
    tf = t_at[d.n_final]
    reps = len(tf)
    reject = np.zeros(reps, dtype=bool)
    tau = np.full(reps, d.n_final, dtype=np.int64)
    open_ = np.ones(reps, dtype=bool)

    def settle(mask, is_reject, size):
        mm = mask & open_
        reject[mm] = is_reject
        tau[mm] = size
        open_[mm] = False

    if n1 <= n0:
        settle(t1 > d.kappa_reject, True, n1)
    if n0 <= n1:
        settle(t0 <= d.kappa_accept, False, n0)
    if n1 <= n0 <= m:
        settle(t0 <= d.kappa_accept, False, n0)
    if n1 <= m <= n0:
        settle(tm > d.kappa_reject2, True, m)
    if n0 <= n1:
        settle(t1 > d.kappa_reject, True, n1)
    if n0 <= m:
        settle(tm > d.kappa_reject2, True, m)
    if m <= n0:
        settle(t0 <= d.kappa_accept, False, n0)
    settle(tf > d.kappa_final, True, d.n_final)
    return reject, tau


def _stage_numbers(checkpoints: Sequence[int], tau: np.ndarray) -> np.ndarray:
    uniq = np.unique(np.asarray(checkpoints, dtype=np.int64))
    return np.searchsorted(uniq, tau) + 1


def _split_blocks(reps: int, threads: int):
    plan = list(streams.blocks(reps))
    if threads <= 1 or len(plan) <= 1:
        return [plan]
    k = min(threads, len(plan))
    size = math.ceil(len(plan) / k)
    return [plan[i:i + size] for i in range(0, len(plan), size)]


def _sim_stat_at(model: ModelSpec, param: float, checkpoints, reps: int,
                 seed: int, tag: str, threads: int) -> Dict[int, np.ndarray]:
    chunks = _split_blocks(reps, threads)
    if len(chunks) == 1:
        ss = sim_suffstats(model, param, checkpoints, reps, seed, tag)
        vals = stat_values(model, ss)
        return {int(n): vals[:, i] for i, n in enumerate(ss.n)}
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        futs = [pool.submit(sim_suffstats, model, param, checkpoints, reps,
                            seed, tag, plan) for plan in chunks]
        parts = [f.result() for f in futs]
    cps = parts[0].n
    data = {k: np.concatenate([p.data[k] for p in parts], axis=0)
            for k in parts[0].data}
    vals = stat_values(model, type(parts[0])(n=cps, data=data))
    return {int(n): vals[:, i] for i, n in enumerate(cps)}


def _run_sprt_block(design: SprtDesign, model: ModelSpec, param: float,
                    seed: int, tag: str, block: int, size: int):
    rng = streams.substream(seed, tag, block)
    lo, hi = -design.accept_boundary, design.reject_boundary
    carry = start_carry(model, size)
    cum = np.zeros(size)
    tau = np.zeros(size, dtype=np.int64)
    reject = np.zeros(size, dtype=bool)
    capped = np.zeros(size, dtype=bool)
    from .multistage import SPRT_STEP_CAP

    active = np.arange(size)
    steps_done = 0
    while len(active):
        inc, carry = llr_increments(model, param, carry, _SPRT_CHUNK, rng)
        path = cum[:, None] + np.cumsum(inc, axis=1)
        crossed = (path >= hi) | (path <= lo)
        any_cross = crossed.any(axis=1)
        first = np.where(any_cross, crossed.argmax(axis=1), _SPRT_CHUNK - 1)
        done = any_cross
        if steps_done + _SPRT_CHUNK >= SPRT_STEP_CAP:
            capped[active[~done]] = True
            done = np.ones(len(active), dtype=bool)
        idx = active[done]
        tau[idx] = steps_done + first[done] + 1
        reject[idx] = path[done, first[done]] >= hi
        keep = ~done
        active = active[keep]
        cum = path[keep, -1]
        carry = carry[keep]
        steps_done += _SPRT_CHUNK
    return tau, reject, capped


def _evaluate_sprt(design: SprtDesign, model: ModelSpec, param: float,
                   reps: int, seed: int, threads: int):
    tag = f"eval-sprt-{param!r}"
    plan = list(streams.blocks(reps))

    def work(item):
        b, size = item
        return _run_sprt_block(design, model, param, seed, tag, b, size)

    if threads > 1 and len(plan) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, plan))
    else:
        parts = [work(item) for item in plan]
    tau = np.concatenate([p[0] for p in parts])
    reject = np.concatenate([p[1] for p in parts])
    return tau, reject, {1: 1.0}


def evaluate(design, model: ModelSpec, true_param: float, reps: int = 10_000,
             seed: int = 0, threads: int = 1) -> EvalReport:
    """Monte Carlo evaluation of one designed test at one true parameter."""
    if reps < 100:
        raise ValueError("at least 100 replications are required")
    kind = test_kind(design)
    if kind == "sprt":
        tau, reject, freqs = _evaluate_sprt(design, model, true_param, reps,
                                            seed, threads)
    elif kind == "fss":
        t_at = _sim_stat_at(model, true_param, [design.n_star], reps, seed,
                            f"eval-fss-{true_param!r}", threads)
        t = t_at[design.n_star]
        reject = t > design.kappa_star
        tau = np.full(reps, design.n_star, dtype=np.int64)
        freqs = {1: 1.0}
    else:
        cps = design.checkpoints()
        t_at = _sim_stat_at(model, true_param, cps, reps, seed,
                            f"eval-{kind}-{true_param!r}", threads)
        decide = {"three": _decide_three, "four-hat": _decide_four_hat,
                  "four-check": _decide_four_check}[kind]
        reject, tau = decide(design, t_at)
        stages = _stage_numbers(cps, tau)
        counts = np.bincount(stages, minlength=len(set(cps)) + 1)[1:]
        freqs = {i + 1: c / reps for i, c in enumerate(counts) if c > 0}
    ess = float(tau.mean())
    ess_se = float(tau.std(ddof=1) / math.sqrt(reps))
    rej = float(reject.mean())
    rej_se = math.sqrt(rej * (1 - rej) / reps)
    lower = upper = None
    if kind in ("three", "four-hat", "four-check"):
        if math.isclose(true_param, model.mu0, rel_tol=0, abs_tol=1e-12):
            lower, upper = ess_bounds(design, "null")
        elif math.isclose(true_param, model.mu1, rel_tol=0, abs_tol=1e-12):
            lower, upper = ess_bounds(design, "alternative")
    return EvalReport(kind, model, true_param, reps, ess, ess_se, rej, rej_se,
                      freqs, seed, design.alpha, design.beta, lower, upper)


# ---------------------------------------------------------------------------
# exact Gaussian oracle


def _sum_threshold(model: ModelSpec, n: int, kappa: float) -> float:
    """Map a statistic threshold to the equivalent threshold on sum(X)."""
    if model.statistic == Statistic.AVG_LLR:
        return n * kappa / (model.mu1 - model.mu0)
    if model.statistic == Statistic.SAMPLE_MEAN:
        return n * kappa
    raise NotApplicableError("exact ESS needs the LLR or sample-mean statistic")


def gaussian_exact_ess(design: ThreeStageDesign, model: ModelSpec,
                       true_mu: float) -> float:
    """Exact expected sample size of a 3-stage test on the Gaussian model.

    The statistic at the two early checkpoints is jointly Gaussian with
    independent increments, so the bivariate orthant probability in the
    sample-size identity reduces to a one-dimensional integral, evaluated
    with 128-node Gauss-Legendre quadrature (absolute accuracy far below
    1e-8 over the 12-sigma integration window).
    """
    from scipy.stats import norm

    if not isinstance(model.kind, GaussianMean):
        raise NotApplicableError("exact ESS is available for the Gaussian model")
    d = design
    n0, n1, nf = d.n_accept, d.n_reject, d.n_final
    s0 = _sum_threshold(model, n0, d.kappa_accept)
    s1 = _sum_threshold(model, n1, d.kappa_reject)
    nodes, weights = np.polynomial.legendre.leggauss(128)

    def joint_first(s_a, n_a, s_b, n_b):
        # P(S_{n_a} > s_a, S_{n_b} <= s_b) with n_a < n_b
        mean, sd = n_a * true_mu, math.sqrt(n_a)
        lo = max(s_a, mean - 12 * sd)
        hi = mean + 12 * sd
        if lo >= hi:
            return 0.0
        u = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        w = 0.5 * (hi - lo) * weights
        dm = (n_b - n_a) * true_mu
        dsd = math.sqrt(n_b - n_a)
        dens = norm.pdf((u - mean) / sd) / sd
        return float(np.sum(w * dens * norm.cdf((s_b - u - dm) / dsd)))

    def joint_second(s_b, n_b, s_a, n_a):
        # P(S_{n_b} <= s_b, S_{n_a} > s_a) with n_b < n_a
        mean, sd = n_b * true_mu, math.sqrt(n_b)
        lo = mean - 12 * sd
        hi = min(s_b, mean + 12 * sd)
        if lo >= hi:
            return 0.0
        u = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        w = 0.5 * (hi - lo) * weights
        dm = (n_a - n_b) * true_mu
        dsd = math.sqrt(n_a - n_b)
        dens = norm.pdf((u - mean) / sd) / sd
        return float(np.sum(w * dens * norm.sf((s_a - u - dm) / dsd)))

    if n0 <= n1:
        p_pass0 = float(norm.sf((s0 - n0 * true_mu) / math.sqrt(n0)))
        if n0 == n1:
            z1 = (s1 - n1 * true_mu) / math.sqrt(n1)
            z0 = (s0 - n0 * true_mu) / math.sqrt(n0)
            joint = max(norm.cdf(z1) - norm.cdf(z0), 0.0)
        else:
            joint = joint_first(s0, n0, s1, n1)
        return n0 + (n1 - n0) * p_pass0 + (nf - n1) * joint
    p_cont1 = float(norm.cdf((s1 - n1 * true_mu) / math.sqrt(n1)))
    joint = joint_second(s1, n1, s0, n0)
    return n1 + (n0 - n1) * p_cont1 + (nf - n0) * joint


# ---------------------------------------------------------------------------
# sweeps and CSV output


def sweep(regime: RegimeSpec, model: ModelSpec, tests: Sequence[str],
          design_fn, reps: int = 10_000, seed: int = 0,
          threads: int = 1) -> List[dict]:
    """Evaluate tests under the null across the regime's beta grid.

    ``design_fn(kind, alpha, beta)`` must return the designed test of each
    requested kind.  Returns CSV-ready row dicts carrying the ratio of each
    test's expected sample size to the SPRT's.
    """
    rows: List[dict] = []
    for beta in regime.betas:
        alpha = regime.alpha_of(beta)
        sprt_report = evaluate(design_fn("sprt", alpha, beta), model,
                               model.mu0, reps, seed, threads)
        for kind in tests:
            if kind == "sprt":
                report = sprt_report
            else:
                report = evaluate(design_fn(kind, alpha, beta), model,
                                  model.mu0, reps, seed, threads)
            row = report_row(report)
            row["regime"] = regime.regime.value
            ratio = report.ess / sprt_report.ess
            rel = math.hypot(report.ess_se / report.ess,
                             sprt_report.ess_se / sprt_report.ess)
            row["ratio"] = f"{ratio:.10g}"
            row["ratio_se"] = f"{ratio * rel:.10g}"
            rows.append(row)
    return rows


def _model_name(model: ModelSpec) -> str:
    return {"GaussianMean": "gaussian", "Ar1": "ar1",
            "TwoStateMarkov": "markov"}[type(model.kind).__name__]


def report_row(r: EvalReport) -> dict:
    return {
        "test": r.test,
        "model": _model_name(r.model),
        "statistic": r.model.statistic.value,
        "alpha": f"{r.alpha:.10g}",
        "beta": f"{r.beta:.10g}",
        "true_param": f"{r.true_param:.10g}",
        "reps": str(r.reps),
        "ess": f"{r.ess:.10g}",
        "ess_se": f"{r.ess_se:.10g}",
        "reject_rate": f"{r.reject_rate:.10g}",
        "reject_se": f"{r.reject_se:.10g}",
        "bound_lower": "" if r.bound_lower is None else f"{r.bound_lower:.10g}",
        "bound_upper": "" if r.bound_upper is None else f"{r.bound_upper:.10g}",
        "seed": str(r.seed),
    }


def write_csv(path, rows: List[dict], columns: Optional[List[str]] = None):
    """Write rows in the fixed column order; missing keys become blanks."""
    cols = columns or CSV_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in cols})
