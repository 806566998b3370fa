"""The three statistical models, their simulation, and the test statistics.

A :class:`ModelSpec` pairs one of three observation models with a test
statistic:

* iid Gaussian with unit variance and symmetric means ``-eta`` / ``+eta``,
  with the average log-likelihood ratio, the sample mean, or a binarized
  sample mean as statistic;
* a Gaussian first-order autoregression started at zero, with the average
  log-likelihood ratio or the Yule-Walker coefficient estimator;
* a two-state Markov chain started in state 0 whose second transition row
  ``(1-mu, mu)`` is the unknown, with the average log-likelihood ratio or
  the sample mean of the visited states.

The module offers two simulation layers.  :class:`PathState` plus
:func:`simulate_step` advance a single path one observation at a time,
maintaining sufficient statistics with compensated summation.  The batch
layer (:func:`sim_suffstats`, :func:`llr_increments`) simulates whole blocks
of replications with numpy, which is what the design search and the Monte
Carlo harness use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from . import streams
from .errors import ConstructionError, DomainError


class Statistic(str, Enum):
    AVG_LLR = "avg-llr"
    SAMPLE_MEAN = "sample-mean"
    BINARIZED = "binarized"
    YULE_WALKER = "yule-walker"


class Hypothesis(int, Enum):
    P0 = 0
    P1 = 1


@dataclass(frozen=True)
class GaussianMean:
    """iid N(mu, 1) observations; hypotheses at mu = -eta and mu = +eta."""

    eta: float

    def validate(self):
        if not self.eta > 0:
            raise ConstructionError("gaussian eta must be positive")


@dataclass(frozen=True)
class Ar1:
    """X_n = mu X_{n-1} + eps_n with standard Gaussian noise, X_0 = 0."""

    mu0: float
    mu1: float

    def validate(self):
        if not (-1 < self.mu0 < 1 and -1 < self.mu1 < 1):
            raise ConstructionError("ar1 coefficients must lie in (-1, 1)")
        if not self.mu0 < self.mu1:
            raise ConstructionError("ar1 requires mu0 < mu1")


@dataclass(frozen=True)
class TwoStateMarkov:
    """Two-state chain, rows (p, 1-p) and (1-mu, mu); X_0 = 0, mu unknown."""

    p: float
    mu0: float
    mu1: float

    def validate(self):
        for name, v in (("p", self.p), ("mu0", self.mu0), ("mu1", self.mu1)):
            if not 0 < v < 1:
                raise ConstructionError(f"markov {name} must lie in (0, 1)")
        if not self.mu0 < self.mu1:
            raise ConstructionError("markov requires mu0 < mu1")


ModelKind = Union[GaussianMean, Ar1, TwoStateMarkov]

_ALLOWED = {
    GaussianMean: {Statistic.AVG_LLR, Statistic.SAMPLE_MEAN, Statistic.BINARIZED},
    Ar1: {Statistic.AVG_LLR, Statistic.YULE_WALKER},
    TwoStateMarkov: {Statistic.AVG_LLR, Statistic.SAMPLE_MEAN},
}


@dataclass(frozen=True)
class ModelSpec:
    """An observation model together with the test statistic in force.

    ``x_star`` is the binarization threshold and is only meaningful for the
    binarized Gaussian statistic; it defaults to 0, the midpoint of the two
    symmetric means.
    """

    kind: ModelKind
    statistic: Statistic = Statistic.AVG_LLR
    x_star: float = 0.0

    def __post_init__(self):
        self.kind.validate()
        allowed = _ALLOWED[type(self.kind)]
        if self.statistic not in allowed:
            raise ConstructionError(
                f"{type(self.kind).__name__} does not admit statistic "
                f"{self.statistic.value}; allowed: {sorted(s.value for s in allowed)}"
            )

    @property
    def mu0(self) -> float:
        if isinstance(self.kind, GaussianMean):
            return -self.kind.eta
        return self.kind.mu0

    @property
    def mu1(self) -> float:
        if isinstance(self.kind, GaussianMean):
            return self.kind.eta
        return self.kind.mu1

    def hyp_param(self, hyp: Hypothesis) -> float:
        return self.mu1 if hyp == Hypothesis.P1 else self.mu0

    def check_param(self, param: float):
        k = self.kind
        if isinstance(k, GaussianMean):
            if not math.isfinite(param):
                raise DomainError("gaussian mean must be finite")
        elif isinstance(k, Ar1):
            if not -1 < param < 1:
                raise DomainError("ar1 coefficient must lie in (-1, 1)")
        else:
            if not 0 < param < 1:
                raise DomainError("markov parameter must lie in (0, 1)")


class _Kahan:
    """Compensated accumulator; keeps long-path roundoff below 1e-9."""

    __slots__ = ("total", "_c")

    def __init__(self):
        self.total = 0.0
        self._c = 0.0

    def add(self, v: float):
        y = v - self._c
        t = self.total + y
        self._c = (t - self.total) - y
        self.total = t


@dataclass
class PathState:
    """Running sufficient statistics of one simulated path.

    ``statistic_value`` is the current value of the model's test statistic,
    ``llr_value`` the log-likelihood ratio of the alternative vs the null on
    the observations so far.  The remaining fields are the per-model
    accumulators both quantities (and importance weights) derive from.
    """

    n: int = 0
    statistic_value: float = 0.0
    llr_value: float = 0.0
    sum_x: _Kahan = field(default_factory=_Kahan)
    count_above: int = 0
    sum_lag_xx: _Kahan = field(default_factory=_Kahan)
    sum_lag_x2: _Kahan = field(default_factory=_Kahan)
    sum_x2: _Kahan = field(default_factory=_Kahan)
    counts: Optional[np.ndarray] = None
    last: float = 0.0


def new_state(model: ModelSpec) -> PathState:
    """Fresh state: no observations, AR(1) at X_0 = 0, chain in state 0."""
    state = PathState()
    if isinstance(model.kind, TwoStateMarkov):
        state.counts = np.zeros((2, 2), dtype=np.int64)
        state.last = 0
    return state


def _refresh(model: ModelSpec, state: PathState):
    k = model.kind
    n = state.n
    if isinstance(k, GaussianMean):
        delta = model.mu1 - model.mu0
        state.llr_value = delta * state.sum_x.total  # varphi(mu1) = varphi(mu0)
        if model.statistic == Statistic.AVG_LLR:
            state.statistic_value = state.llr_value / n
        elif model.statistic == Statistic.SAMPLE_MEAN:
            state.statistic_value = state.sum_x.total / n
        else:
            state.statistic_value = state.count_above / n
    elif isinstance(k, Ar1):
        delta = k.mu1 - k.mu0
        mid = 0.5 * (k.mu0 + k.mu1)
        state.llr_value = delta * (state.sum_lag_xx.total - mid * state.sum_lag_x2.total)
        if model.statistic == Statistic.AVG_LLR:
            state.statistic_value = state.llr_value / n
        else:
            denom = state.sum_x2.total
            state.statistic_value = state.sum_lag_xx.total / denom if denom > 0 else 0.0
    else:
        state.llr_value = (
            state.counts[1, 0] * math.log((1 - k.mu1) / (1 - k.mu0))
            + state.counts[1, 1] * math.log(k.mu1 / k.mu0)
        )
        if model.statistic == Statistic.AVG_LLR:
            state.statistic_value = state.llr_value / n
        else:
            state.statistic_value = (state.counts[0, 1] + state.counts[1, 1]) / n


def update_state(model: ModelSpec, state: PathState, x: float) -> PathState:
    """Advance the state with one given observation (in place)."""
    k = model.kind
    if isinstance(k, GaussianMean):
        state.sum_x.add(x)
        if x > model.x_star:
            state.count_above += 1
    elif isinstance(k, Ar1):
        prev = state.last
        state.sum_lag_xx.add(prev * x)
        state.sum_lag_x2.add(prev * prev)
        state.sum_x2.add(x * x)
        state.last = x
    else:
        j = int(x)
        state.counts[int(state.last), j] += 1
        state.last = j
    state.n += 1
    _refresh(model, state)
    return state


def draw_next(model: ModelSpec, param: float, state: PathState,
              rng: np.random.Generator) -> float:
    """Draw the next observation under the given parameter."""
    model.check_param(param)
    k = model.kind
    if isinstance(k, GaussianMean):
        return param + rng.standard_normal()
    if isinstance(k, Ar1):
        return param * state.last + rng.standard_normal()
    prob_one = (1 - k.p) if int(state.last) == 0 else param
    return 1 if rng.random() < prob_one else 0


def simulate_step(model: ModelSpec, param: float, state: PathState,
                  rng: np.random.Generator) -> PathState:
    """Advance the path by one observation simulated under ``param``."""
    return update_state(model, state, draw_next(model, param, state, rng))


def bernoulli_kl(x: float, y: float) -> float:
    """KL divergence between Bernoulli(x) and Bernoulli(y)."""
    if x <= 0:
        return -math.log(1 - y)
    if x >= 1:
        return -math.log(y)
    return x * math.log(x / y) + (1 - x) * math.log((1 - x) / (1 - y))


def statistic_limit(model: ModelSpec, param: float,
                    statistic: Optional[Statistic] = None) -> float:
    """Almost-sure limit of the statistic when the true parameter is `param`.

    At the two hypothesis parameters this returns the endpoints J0 and J1
    of the statistic's limit interval (for the average LLR these are -I0
    and I1).
    """
    model.check_param(param)
    stat = model.statistic if statistic is None else statistic
    k = model.kind
    if isinstance(k, GaussianMean):
        if stat == Statistic.AVG_LLR:
            delta = model.mu1 - model.mu0
            return delta * param  # varphi'(mu) = mu, symmetric means
        if stat == Statistic.SAMPLE_MEAN:
            return param
        from scipy.stats import norm

        return float(norm.cdf(param - model.x_star))
    if isinstance(k, Ar1):
        if stat == Statistic.AVG_LLR:
            delta = k.mu1 - k.mu0
            mid = 0.5 * (k.mu0 + k.mu1)
            return delta / (1 - param * param) * (param - mid)
        return param
    occ1 = (1 - k.p) / (2 - k.p - param)  # stationary mass of state 1
    if stat == Statistic.AVG_LLR:
        return occ1 * (bernoulli_kl(param, k.mu0) - bernoulli_kl(param, k.mu1))
    return occ1


def _loglr_scalars(model: ModelSpec, a: float, b: float, state: PathState) -> float:
    k = model.kind
    if isinstance(k, GaussianMean):
        return (a - b) * state.sum_x.total - state.n * (a * a - b * b) / 2
    if isinstance(k, Ar1):
        return (a - b) * (state.sum_lag_xx.total
                          - 0.5 * (a + b) * state.sum_lag_x2.total)
    return (state.counts[1, 0] * math.log((1 - a) / (1 - b))
            + state.counts[1, 1] * math.log(a / b))


def tilt_llr(model: ModelSpec, tilt_param: float, base: Hypothesis,
             state: PathState) -> float:
    """log of dP_base/dQ on the current path, Q being the model at `tilt_param`.

    This is the log importance weight attached to a path that was simulated
    under the tilted parameter.
    """
    model.check_param(tilt_param)
    return _loglr_scalars(model, model.hyp_param(base), tilt_param, state)


# ---------------------------------------------------------------------------
# batch layer


@dataclass
class SuffStats:
    """Sufficient statistics of a block of paths at a list of checkpoints.

    ``n`` holds the checkpoints; every array in ``data`` has shape
    ``(reps, len(n))``.
    """

    n: np.ndarray
    data: dict


def _sim_block_gaussian(model, param, checkpoints, reps, rng):
    horizon = int(checkpoints[-1])
    x = param + rng.standard_normal((reps, horizon))
    cols = np.asarray(checkpoints) - 1
    sums = np.cumsum(x, axis=1)[:, cols]
    out = {"sum_x": sums}
    if model.statistic == Statistic.BINARIZED:
        out["count_above"] = np.cumsum(x > model.x_star, axis=1)[:, cols]
    return out


def _sim_block_ar1(model, param, checkpoints, reps, rng):
    horizon = int(checkpoints[-1])
    marks = {int(c): i for i, c in enumerate(checkpoints)}
    k = len(checkpoints)
    lag_xx = np.zeros(reps)
    lag_x2 = np.zeros(reps)
    x2 = np.zeros(reps)
    last = np.zeros(reps)
    out_xx = np.empty((reps, k))
    out_lx2 = np.empty((reps, k))
    out_x2 = np.empty((reps, k))
    eps = rng.standard_normal((reps, horizon))
    for t in range(horizon):
        x = param * last + eps[:, t]
        lag_xx += last * x
        lag_x2 += last * last
        x2 += x * x
        last = x
        i = marks.get(t + 1)
        if i is not None:
            out_xx[:, i] = lag_xx
            out_lx2[:, i] = lag_x2
            out_x2[:, i] = x2
    return {"sum_lag_xx": out_xx, "sum_lag_x2": out_lx2, "sum_x2": out_x2}


def _sim_block_markov(model, param, checkpoints, reps, rng):
    horizon = int(checkpoints[-1])
    marks = {int(c): i for i, c in enumerate(checkpoints)}
    k = len(checkpoints)
    p = model.kind.p
    n10 = np.zeros(reps)
    n11 = np.zeros(reps)
    nstate1 = np.zeros(reps)  # visits to state 1 among X_1..X_n
    last = np.zeros(reps, dtype=np.int64)
    out = {name: np.empty((reps, k)) for name in ("n10", "n11", "nstate1")}
    u = rng.random((reps, horizon))
    for t in range(horizon):
        prob_one = np.where(last == 0, 1 - p, param)
        nxt = (u[:, t] < prob_one).astype(np.int64)
        from_one = last == 1
        n10 += from_one & (nxt == 0)
        n11 += from_one & (nxt == 1)
        nstate1 += nxt
        last = nxt
        i = marks.get(t + 1)
        if i is not None:
            out["n10"][:, i] = n10
            out["n11"][:, i] = n11
            out["nstate1"][:, i] = nstate1
    return out


def sim_suffstats(model: ModelSpec, param: float, checkpoints, reps: int,
                  seed: int, tag: str, block_plan=None) -> SuffStats:
    """Simulate `reps` paths, returning sufficient statistics at checkpoints.

    Replications are simulated in fixed blocks with one substream per block
    (see :mod:`mstage.streams`), so the result depends only on
    ``(seed, tag, reps)``.  ``block_plan`` can restrict the call to a
    contiguous run of (block index, size) pairs, letting callers split the
    work across workers without changing any draw.
    """
    model.check_param(param)
    cps = np.asarray(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    if len(cps) == 0 or cps[0] < 1:
        raise ValueError("checkpoints must be positive integers")
    k = model.kind
    if isinstance(k, GaussianMean):
        sim = _sim_block_gaussian
    elif isinstance(k, Ar1):
        sim = _sim_block_ar1
    else:
        sim = _sim_block_markov
    plan = list(streams.blocks(reps)) if block_plan is None else list(block_plan)
    parts = []
    for b, size in plan:
        rng = streams.substream(seed, tag, b)
        parts.append(sim(model, param, cps, size, rng))
    data = {key: np.concatenate([p[key] for p in parts], axis=0) for key in parts[0]}
    return SuffStats(n=cps, data=data)


def stat_values(model: ModelSpec, ss: SuffStats,
                statistic: Optional[Statistic] = None) -> np.ndarray:
    """Statistic values (reps, k) from batch sufficient statistics."""
    stat = model.statistic if statistic is None else statistic
    n = ss.n.astype(float)
    k = model.kind
    if isinstance(k, GaussianMean):
        if stat == Statistic.AVG_LLR:
            return (model.mu1 - model.mu0) * ss.data["sum_x"] / n
        if stat == Statistic.SAMPLE_MEAN:
            return ss.data["sum_x"] / n
        return ss.data["count_above"] / n
    if isinstance(k, Ar1):
        if stat == Statistic.AVG_LLR:
            delta = k.mu1 - k.mu0
            mid = 0.5 * (k.mu0 + k.mu1)
            return delta * (ss.data["sum_lag_xx"] - mid * ss.data["sum_lag_x2"]) / n
        with np.errstate(invalid="ignore", divide="ignore"):
            out = ss.data["sum_lag_xx"] / ss.data["sum_x2"]
        return np.where(ss.data["sum_x2"] > 0, out, 0.0)
    if stat == Statistic.AVG_LLR:
        return loglr_values(model, k.mu1, k.mu0, ss) / n
    return ss.data["nstate1"] / n


def loglr_values(model: ModelSpec, a: float, b: float, ss: SuffStats) -> np.ndarray:
    """log dP_a/dP_b at the checkpoints, one row per path."""
    n = ss.n.astype(float)
    k = model.kind
    if isinstance(k, GaussianMean):
        return (a - b) * ss.data["sum_x"] - n * (a * a - b * b) / 2
    if isinstance(k, Ar1):
        return (a - b) * (ss.data["sum_lag_xx"]
                          - 0.5 * (a + b) * ss.data["sum_lag_x2"])
    return (ss.data["n10"] * math.log((1 - a) / (1 - b))
            + ss.data["n11"] * math.log(a / b))


def start_carry(model: ModelSpec, reps: int):
    """Per-path carry (AR(1) last value / chain state) for chunked stepping."""
    if isinstance(model.kind, TwoStateMarkov):
        return np.zeros(reps, dtype=np.int64)
    return np.zeros(reps)


def llr_increments(model: ModelSpec, param: float, carry, steps: int,
                   rng: np.random.Generator):
    """Simulate `steps` observations per path; return LLR increments and carry.

    Used by the sequential-test runner, which needs the full LLR path rather
    than values at fixed checkpoints.
    """
    k = model.kind
    reps = len(carry)
    if isinstance(k, GaussianMean):
        x = param + rng.standard_normal((reps, steps))
        return (model.mu1 - model.mu0) * x, carry
    if isinstance(k, Ar1):
        delta = k.mu1 - k.mu0
        mid = 0.5 * (k.mu0 + k.mu1)
        eps = rng.standard_normal((reps, steps))
        inc = np.empty((reps, steps))
        last = carry
        for t in range(steps):
            x = param * last + eps[:, t]
            inc[:, t] = delta * (last * x - mid * last * last)
            last = x
        return inc, last
    p = k.p
    r10 = math.log((1 - k.mu1) / (1 - k.mu0))
    r11 = math.log(k.mu1 / k.mu0)
    u = rng.random((reps, steps))
    inc = np.empty((reps, steps))
    last = carry
    for t in range(steps):
        prob_one = np.where(last == 0, 1 - p, param)
        nxt = (u[:, t] < prob_one).astype(np.int64)
        from_one = last == 1
        inc[:, t] = np.where(from_one, np.where(nxt == 1, r11, r10), 0.0)
        last = nxt
    return inc, last
