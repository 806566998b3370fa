"""Fixed-sample-size design: smallest n and threshold meeting both error levels.

For the Gaussian model with the likelihood-ratio or sample-mean statistic
the design comes in closed form from standard normal quantiles.  For every
other pairing the design is found by simulation: the sample size grows
geometrically until a feasible threshold exists, then bisection pins the
smallest feasible n.  Feasibility at fixed n locates the null upper
quantile of the statistic by monotone bisection in the threshold, and then
checks the alternative constraint there.

All tail probabilities at a given (hypothesis, n) are evaluated against one
common batch of simulated paths, so the bisection predicate is exactly
monotone and the search is reproducible from the master seed.  Estimates
below the plain Monte Carlo floor of 1e-3 are served by importance
sampling: the batch is simulated under a limit-matching tilt and reweighted,
with thresholds resolved against precomputed weighted suffix sums.  A
stochastic constraint counts as satisfied only when estimate + 2 SE is
below the level and the estimate rests on at least 20 event hits, which
biases designs toward conservatism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.stats import norm

from .errors import InfeasibleBudgetError
from .models import (
    GaussianMean,
    Hypothesis,
    ModelSpec,
    Statistic,
    loglr_values,
    sim_suffstats,
    stat_values,
    statistic_limit,
)
from .sampler import MIN_HITS_RELIABLE, tilt_for_level

MC_FLOOR = 1e-3
_TILT_BUCKETS = 40  # tilt-target quantization for batch reuse across thresholds


@dataclass(frozen=True)
class SimBudget:
    """Replications per probability estimate, master seed, search cap."""

    reps: int = 10_000
    seed: int = 0
    max_n: int = 10_000


class Method(str, Enum):
    CLOSED_FORM = "closed-form"
    MONTE_CARLO = "monte-carlo"
    IMPORTANCE_SAMPLING = "importance-sampling"


@dataclass(frozen=True)
class Probe:
    n: int
    kappa: float
    hypothesis: int
    estimate: float
    se: float
    level: float
    satisfied: bool


@dataclass(frozen=True)
class FssDesign:
    alpha: float
    beta: float
    n_star: int
    kappa_star: float
    method: Method
    evidence: List[Probe] = field(default_factory=list)


@dataclass(frozen=True)
class TailEstimate:
    estimate: float
    se: float
    reliable: bool

    def certifies(self, level: float) -> bool:
        return self.reliable and self.estimate + 2 * self.se <= level


def gaussian_tail_exact(model: ModelSpec, hyp: Hypothesis, n: int,
                        kappa: float) -> float:
    """Exact P0(T_n > kappa) (hyp P0) or P1(T_n <= kappa) (hyp P1)."""
    eta = model.kind.eta
    if model.statistic == Statistic.AVG_LLR:
        big_i = 2 * eta * eta
        mean = -big_i if hyp == Hypothesis.P0 else big_i
        sd = math.sqrt(2 * big_i / n)
    elif model.statistic == Statistic.SAMPLE_MEAN:
        mean = model.hyp_param(hyp)
        sd = math.sqrt(1.0 / n)
    else:
        raise ValueError("exact Gaussian tails require the LLR or mean statistic")
    z = (kappa - mean) / sd
    return float(norm.sf(z)) if hyp == Hypothesis.P0 else float(norm.cdf(z))


def _gaussian_quantile(model: ModelSpec, level: float, n: int,
                       hyp: Hypothesis = Hypothesis.P0) -> float:
    """Tightest threshold meeting `level` at fixed n, on the statistic scale."""
    eta = model.kind.eta
    z = float(norm.isf(level))
    if model.statistic == Statistic.SAMPLE_MEAN:
        k = -eta + z / math.sqrt(n)
    else:
        big_i = 2 * eta * eta
        k = -big_i + z * math.sqrt(2 * big_i / n)
    return k if hyp == Hypothesis.P0 else -k


def _clamp_into_limits(model: ModelSpec, kappa: float, window_lo: float,
                       window_hi: float) -> float:
    """Pull a threshold inside the open limit interval when that preserves
    the certified window [window_lo, window_hi]; error control wins ties."""
    j0 = statistic_limit(model, model.mu0)
    j1 = statistic_limit(model, model.mu1)
    eps = 1e-9 * (j1 - j0)
    lo = max(window_lo, j0 + eps)
    hi = min(window_hi, j1 - eps)
    if lo > hi:
        return kappa
    return min(max(kappa, lo), hi)


def _gaussian_closed_form(model: ModelSpec, alpha: float, beta: float) -> FssDesign:
    eta = model.kind.eta
    big_i = 2 * eta * eta
    za = float(norm.isf(alpha))
    zb = float(norm.isf(beta))
    if za + zb > 0:
        n_star = max(1, math.ceil((za + zb) ** 2 / (2 * big_i)))
        kappa_llr = big_i * (za - zb) / (za + zb)
    else:
        # levels so loose that one observation suffices; report the null quantile
        n_star = 1
        kappa_llr = -big_i + za * math.sqrt(2 * big_i)
    if model.statistic == Statistic.SAMPLE_MEAN:
        kappa = kappa_llr / (2 * eta)  # affine map between the two scales
    else:
        kappa = kappa_llr
    kappa = _clamp_into_limits(model, kappa,
                               _gaussian_quantile(model, alpha, n_star),
                               _gaussian_quantile(model, beta, n_star,
                                                  Hypothesis.P1))
    evidence = []
    if n_star > 1:
        prev = n_star - 1
        k_alpha = _gaussian_quantile(model, alpha, prev)
        p1 = gaussian_tail_exact(model, Hypothesis.P1, prev, k_alpha)
        evidence.append(Probe(prev, k_alpha, 1, p1, 0.0, beta, p1 <= beta))
    p0 = gaussian_tail_exact(model, Hypothesis.P0, n_star, kappa)
    p1 = gaussian_tail_exact(model, Hypothesis.P1, n_star, kappa)
    evidence.append(Probe(n_star, kappa, 0, p0, 0.0, alpha, p0 <= alpha))
    evidence.append(Probe(n_star, kappa, 1, p1, 0.0, beta, p1 <= beta))
    return FssDesign(alpha, beta, n_star, kappa, Method.CLOSED_FORM, evidence)


class _WeightedBatch:
    """Statistic values sorted ascending with weight suffix/prefix sums.

    The minimum-hit reliability rule applies to weighted (tilted) batches,
    where a few huge weights can masquerade as precision; plain batches are
    guarded by the Monte Carlo floor delegation instead.
    """

    def __init__(self, t_vals: np.ndarray, weights: np.ndarray,
                 weighted: bool = True):
        self.weighted = weighted
        order = np.argsort(t_vals, kind="stable")
        self.t = t_vals[order]
        w = weights[order]
        self.reps = len(w)
        w2 = w * w
        self.suffix_w = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
        self.suffix_w2 = np.concatenate([np.cumsum(w2[::-1])[::-1], [0.0]])
        self.prefix_w = np.concatenate([[0.0], np.cumsum(w)])
        self.prefix_w2 = np.concatenate([[0.0], np.cumsum(w2)])

    def tail(self, hyp: Hypothesis, kappa: float) -> TailEstimate:
        idx = int(np.searchsorted(self.t, kappa, side="right"))
        if hyp == Hypothesis.P0:  # event {T > kappa}
            hits = self.reps - idx
            s1 = float(self.suffix_w[idx])
            s2 = float(self.suffix_w2[idx])
        else:  # event {T <= kappa}
            hits = idx
            s1 = float(self.prefix_w[idx])
            s2 = float(self.prefix_w2[idx])
        est = s1 / self.reps
        second = s2 / self.reps
        se = math.sqrt(max(second - est * est, 0.0) / self.reps)
        reliable = hits >= MIN_HITS_RELIABLE if self.weighted else True
        return TailEstimate(est, se, reliable)


class _TailCache:
    """Common-random-number tail estimates for one design search.

    One plain batch per (hypothesis, n); one reweighted tilted batch per
    (hypothesis, n, tilt bucket) for thresholds whose plain estimate falls
    below the Monte Carlo floor.
    """

    def __init__(self, model: ModelSpec, budget: SimBudget):
        self.model = model
        self.budget = budget
        self._plain: dict = {}
        self._tilted: dict = {}
        self.used_is = False
        self.j0 = statistic_limit(model, model.mu0)
        self.j1 = statistic_limit(model, model.mu1)
        self.span = self.j1 - self.j0

    def _plain_batch(self, hyp: Hypothesis, n: int) -> _WeightedBatch:
        key = (hyp, n)
        if key not in self._plain:
            ss = sim_suffstats(self.model, self.model.hyp_param(hyp), [n],
                               self.budget.reps, self.budget.seed,
                               f"fss-{int(hyp)}-{n}")
            t = stat_values(self.model, ss)[:, 0]
            self._plain[key] = _WeightedBatch(t, np.ones(len(t)), weighted=False)
        return self._plain[key]

    def _tilted_batch(self, hyp: Hypothesis, n: int, kappa: float) -> _WeightedBatch:
        frac = (min(max(kappa, self.j0), self.j1) - self.j0) / self.span
        bucket = int(round(frac * _TILT_BUCKETS))
        key = (hyp, n, bucket)
        if key not in self._tilted:
            margin = 0.5 / _TILT_BUCKETS
            frac_c = min(max(bucket / _TILT_BUCKETS, margin), 1 - margin)
            target = self.j0 + frac_c * self.span
            tilt = tilt_for_level(self.model, target, base=hyp)
            ss = sim_suffstats(self.model, tilt.tilt_param, [n],
                               self.budget.reps, self.budget.seed,
                               f"fss-is-{int(hyp)}-{n}-{bucket}")
            t = stat_values(self.model, ss)[:, 0]
            logw = loglr_values(self.model, self.model.hyp_param(hyp),
                                tilt.tilt_param, ss)[:, 0]
            shift = float(logw.max())
            w = np.exp(np.clip(logw - shift, -745.0, 0.0)) * math.exp(min(shift, 700.0))
            self._tilted[key] = _WeightedBatch(t, w)
        return self._tilted[key]

    def tail(self, hyp: Hypothesis, n: int, kappa: float) -> TailEstimate:
        """P0(T_n > kappa) or P1(T_n <= kappa) with SE and a reliability flag."""
        out = self._plain_batch(hyp, n).tail(hyp, kappa)
        if out.estimate > MC_FLOOR:
            return out
        self.used_is = True
        return self._tilted_batch(hyp, n, kappa).tail(hyp, kappa)


def _kappa_window(model: ModelSpec) -> Tuple[float, float]:
    j0 = statistic_limit(model, model.mu0)
    j1 = statistic_limit(model, model.mu1)
    return j0 - abs(j0), j1 + abs(j1)


def threshold_at(model: ModelSpec, level: float, n: int,
                 budget: SimBudget = SimBudget(),
                 cache: Optional[_TailCache] = None,
                 hyp: Hypothesis = Hypothesis.P0,
                 analytic: bool = True) -> Optional[Tuple[float, TailEstimate]]:
    """Tightest certifiable threshold at fixed n for one tail constraint.

    For hypothesis P0 this is the smallest kappa whose null tail is
    certified below `level`; for P1 the largest kappa whose alternative
    tail is certified.  Returns None when no threshold can be certified at
    this sample size within the budget.
    """
    if analytic and isinstance(model.kind, GaussianMean) and model.statistic in (
            Statistic.AVG_LLR, Statistic.SAMPLE_MEAN):
        k = _gaussian_quantile(model, level, n, hyp)
        p = gaussian_tail_exact(model, hyp, n, k)
        return k, TailEstimate(p, 0.0, True)
    cache = cache or _TailCache(model, budget)
    lo, hi = _kappa_window(model)
    ok = lambda kappa: cache.tail(hyp, n, kappa).certifies(level)
    # orient so that `far` is the certifiable side and `near` the violating one
    near, far = (lo, hi) if hyp == Hypothesis.P0 else (hi, lo)
    span = hi - lo
    step = span
    while ok(near):  # widen past the violating side if necessary
        near += math.copysign(step, near - far)
        step *= 2
        if step > 64 * span:
            return near, cache.tail(hyp, n, near)
    if not ok(far):
        # march from `far` toward `near` looking for a certifiable point
        found = None
        for k in range(1, 41):
            probe = near + (far - near) * (1 - 2.0 ** -k)
            if ok(probe):
                found = probe
                break
        if found is None:
            return None
        far = found
    for _ in range(60):
        mid = 0.5 * (near + far)
        if ok(mid):
            far = mid
        else:
            near = mid
    return far, cache.tail(hyp, n, far)


def _search_design(model: ModelSpec, alpha: float, beta: float,
                   budget: SimBudget,
                   cache: Optional[_TailCache] = None) -> FssDesign:
    cache = cache or _TailCache(model, budget)
    evidence: List[Probe] = []
    feas: dict = {}

    def feasible(n: int) -> Tuple[bool, float]:
        if n in feas:
            return feas[n]
        got = threshold_at(model, alpha, n, budget, cache, analytic=False)
        if got is None:
            feas[n] = (False, math.nan)
            return feas[n]
        kappa, t0 = got
        t1 = cache.tail(Hypothesis.P1, n, kappa)
        evidence.append(Probe(n, kappa, 0, t0.estimate, t0.se, alpha,
                              t0.certifies(alpha)))
        evidence.append(Probe(n, kappa, 1, t1.estimate, t1.se, beta,
                              t1.certifies(beta)))
        feas[n] = (t0.certifies(alpha) and t1.certifies(beta), kappa)
        return feas[n]

    n, last_bad = 1, 0
    while True:
        if n > budget.max_n:
            method = (Method.IMPORTANCE_SAMPLING if cache.used_is
                      else Method.MONTE_CARLO)
            best = None
            probed = [m for m, (_, kap) in feas.items() if not math.isnan(kap)]
            if probed:  # largest probed size: uncertified but closest found
                nb = max(probed)
                best = FssDesign(alpha, beta, nb, feas[nb][1], method, evidence)
            raise InfeasibleBudgetError(
                f"no feasible design certified up to max_n={budget.max_n} for "
                f"levels ({alpha:g}, {beta:g})", best_design=best)
        ok, _ = feasible(n)
        if ok:
            break
        last_bad = n
        n *= 2
    lo, hi = last_bad, n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(mid)[0]:
            hi = mid
        else:
            lo = mid
    kappa_alpha = feasible(hi)[1]
    # report the midpoint of the certified threshold window: the raw null
    # quantile drifts off-center under the conservative acceptance rule,
    # while the midpoint keeps both certifications and the symmetry
    kappa = kappa_alpha
    upper = threshold_at(model, beta, hi, budget, cache, hyp=Hypothesis.P1,
                          analytic=False)
    if upper is not None and upper[0] >= kappa_alpha:
        kappa = 0.5 * (kappa_alpha + upper[0])
        evidence.append(Probe(hi, upper[0], 1, upper[1].estimate, upper[1].se,
                              beta, upper[1].certifies(beta)))
        kappa = _clamp_into_limits(model, kappa, kappa_alpha, upper[0])
    method = Method.IMPORTANCE_SAMPLING if cache.used_is else Method.MONTE_CARLO
    return FssDesign(alpha, beta, hi, kappa, method, evidence)


class FssSolver:
    """Memoized fixed-sample designs sharing one simulation cache.

    Free-parameter grid searches solve hundreds of level pairs against the
    same model; sharing the per-(hypothesis, n) path batches makes each
    additional level pair nearly free.
    """

    def __init__(self, model: ModelSpec, budget: SimBudget = SimBudget(),
                 force_mc: bool = False):
        self.model = model
        self.budget = budget
        self.force_mc = force_mc
        self._closed = (isinstance(model.kind, GaussianMean)
                        and model.statistic in (Statistic.AVG_LLR,
                                                Statistic.SAMPLE_MEAN)
                        and not force_mc)
        self.cache = None if self._closed else _TailCache(model, budget)
        self._memo: dict = {}

    def design(self, alpha: float, beta: float) -> FssDesign:
        key = (alpha, beta)
        if key not in self._memo:
            if self._closed:
                self._memo[key] = _gaussian_closed_form(self.model, alpha, beta)
            else:
                self._memo[key] = _search_design(self.model, alpha, beta,
                                                 self.budget, self.cache)
        return self._memo[key]


def design_fss(model: ModelSpec, alpha: float, beta: float,
               budget: SimBudget = SimBudget(),
               force_mc: bool = False) -> FssDesign:
    """Smallest-n design with certified error control at (alpha, beta)."""
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ValueError("error levels must lie in (0, 1)")
    if (isinstance(model.kind, GaussianMean)
            and model.statistic in (Statistic.AVG_LLR, Statistic.SAMPLE_MEAN)
            and not force_mc):
        return _gaussian_closed_form(model, alpha, beta)
    return _search_design(model, alpha, beta, budget)


def tail_prob(model: ModelSpec, hyp: Hypothesis, n: int, kappa: float,
              budget: SimBudget = SimBudget()) -> Tuple[float, float]:
    """Estimate P0(T_n > kappa) or P1(T_n <= kappa) with a standard error.

    Plain Monte Carlo while the estimate stays above 1e-3; below that the
    importance sampler with the limit-matching tilt takes over.
    """
    from .sampler import above, at_or_below, is_estimate

    ss = sim_suffstats(model, model.hyp_param(hyp), [n], budget.reps,
                       budget.seed, f"tailprob-{int(hyp)}-{n}")
    t_vals = stat_values(model, ss)[:, 0]
    hit = t_vals > kappa if hyp == Hypothesis.P0 else t_vals <= kappa
    est = float(hit.mean())
    if est > MC_FLOOR:
        return est, math.sqrt(est * (1 - est) / budget.reps)
    j0 = statistic_limit(model, model.mu0)
    j1 = statistic_limit(model, model.mu1)
    span = j1 - j0
    target = min(max(kappa, j0 + 1e-6 * span), j1 - 1e-6 * span)
    tilt = tilt_for_level(model, target, base=hyp)
    event = above(kappa) if hyp == Hypothesis.P0 else at_or_below(kappa)
    out = is_estimate(tilt, event, n, budget.reps, seed=budget.seed,
                      tag=f"tailprob-is-{int(hyp)}-{n}")
    return out.estimate, out.se
