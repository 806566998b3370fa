"""Construction and execution of the multistage tests and the SPRT baseline.

Three designs are built on top of the fixed-sample-size design function:

* a 3-stage test with one early-accept and one early-reject opportunity,
  level split (alpha/2, beta/2);
* a 4-stage test adding a second early-accept stage, split (alpha/2, beta/3);
* its mirror adding a second early-reject stage, split (alpha/3, beta/2).

Stage sizes and thresholds come from fixed-sample designs at the split
levels; the free early-stopping levels are chosen to minimize the
closed-form upper bounds on the expected sample size under the relevant
hypothesis, by grid search on a log-uniform grid.  Error control follows
from union bounds, so threshold clamps and stage-size repairs applied after
rounding only ever shrink early-decision regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Tuple

import numpy as np

from .errors import NotApplicableError, TruncatedFeedError
from .fss import FssDesign, FssSolver, SimBudget
from .models import Hypothesis, ModelSpec

GRID_POINTS_1D = 200
GRID_POINTS_2D = 80
SPRT_STEP_CAP = 10_000_000


class Decision(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class RunOutcome:
    decision: Decision
    sample_size: int
    stage_reached: int
    capped: bool = False


@dataclass(frozen=True)
class ThreeStageDesign:
    """Stage sizes/thresholds of the 3-stage test plus its free parameters."""

    alpha: float
    beta: float
    n_accept: int
    n_reject: int
    n_final: int
    kappa_accept: float
    kappa_reject: float
    kappa_final: float
    gamma: float
    delta: float
    provenance: Tuple[FssDesign, ...] = ()

    @property
    def horizon(self) -> int:
        return self.n_final

    def checkpoints(self) -> Tuple[int, ...]:
        return (self.n_accept, self.n_reject, self.n_final)


@dataclass(frozen=True)
class FourStageHatDesign:
    """4-stage test with a second accept opportunity at `n_accept2`."""

    alpha: float
    beta: float
    n_accept: int
    n_reject: int
    n_accept2: int
    n_final: int
    kappa_accept: float
    kappa_reject: float
    kappa_accept2: float
    kappa_final: float
    gamma: float
    gamma2: float
    delta: float
    provenance: Tuple[FssDesign, ...] = ()

    @property
    def horizon(self) -> int:
        return self.n_final

    def checkpoints(self) -> Tuple[int, ...]:
        return (self.n_accept, self.n_reject, self.n_accept2, self.n_final)


@dataclass(frozen=True)
class FourStageCheckDesign:
    """4-stage test with a second reject opportunity at `n_reject2`."""

    alpha: float
    beta: float
    n_accept: int
    n_reject: int
    n_reject2: int
    n_final: int
    kappa_accept: float
    kappa_reject: float
    kappa_reject2: float
    kappa_final: float
    gamma: float
    delta: float
    delta2: float
    provenance: Tuple[FssDesign, ...] = ()

    @property
    def horizon(self) -> int:
        return self.n_final

    def checkpoints(self) -> Tuple[int, ...]:
        return (self.n_accept, self.n_reject, self.n_reject2, self.n_final)


@dataclass(frozen=True)
class SprtDesign:
    """Stops when the LLR leaves (-accept_boundary, reject_boundary)."""

    alpha: float
    beta: float
    accept_boundary: float
    reject_boundary: float


def design_sprt(alpha: float, beta: float) -> SprtDesign:
    return SprtDesign(alpha, beta, abs(math.log(beta)), abs(math.log(alpha)))


# ---------------------------------------------------------------------------
# free-parameter grids and design construction


def _log_grid(lo: float, points: int) -> np.ndarray:
    """Points log-uniform on (lo, 1), endpoints excluded."""
    us = np.linspace(0.0, -math.log(lo), points + 2)[1:-1]
    return np.exp(-us)


def repair_stage_sizes(n_first: int, n_mid: int, n_final: int) -> Tuple[int, int]:
    """Restore strict ordering first < mid < final after integer rounding.

    Bumping a colliding later stage upward only enlarges it, so the error
    certificates of its threshold keep holding; the threshold is reused.
    """
    if n_mid <= n_first:
        n_mid = n_first + 1
    if n_final <= n_mid:
        n_final = n_mid + 1
    return n_mid, n_final


def _argmin_1d(solver: FssSolver, other_level: float, other_first: bool,
               big_n: int, lo: float, points: int = GRID_POINTS_1D) -> float:
    """Level x minimizing n(x) + (N - n(x)) * x over the log grid on (lo, 1).

    ``other_first`` says whether the fixed level is the first argument of
    the design pair (early-reject search) or the second (early-accept).
    """
    best_x, best_u = None, math.inf
    for x in _log_grid(lo, points):
        pair = (other_level, x) if other_first else (x, other_level)
        n = solver.design(*pair).n_star
        u = n + (big_n - n) * x
        if u < best_u:
            best_x, best_u = float(x), u
    return best_x


def _argmin_2d(solver: FssSolver, other_level: float, big_n: int, lo: float,
               points: int = GRID_POINTS_2D) -> Tuple[float, float]:
    """(x, x2) minimizing n(x) + (n(x2)-n(x))x + (N-n(x2))x2, x2 < x."""
    grid = _log_grid(lo, points)
    sizes = {float(x): solver.design(x, other_level).n_star for x in grid}
    best, best_u = None, math.inf
    for x in grid:
        n_first = sizes[float(x)]
        for x2 in grid:
            if not x2 < x:
                continue
            n_mid = sizes[float(x2)]
            u = n_first + (n_mid - n_first) * x + (big_n - n_mid) * x2
            if u < best_u:
                best, best_u = (float(x), float(x2)), u
    return best


def design_three_stage(model: ModelSpec, alpha: float, beta: float,
                       budget: SimBudget = SimBudget(),
                       solver: Optional[FssSolver] = None) -> ThreeStageDesign:
    """3-stage design with error control at (alpha, beta)."""
    solver = solver or FssSolver(model, budget)
    a2, b2 = alpha / 2, beta / 2
    final = solver.design(a2, b2)
    gamma = _argmin_1d(solver, b2, False, final.n_star, a2)
    delta = _argmin_1d(solver, a2, True, final.n_star, b2)
    d_acc = solver.design(gamma, b2)
    d_rej = solver.design(a2, delta)
    kappa_accept = min(d_acc.kappa_star, d_rej.kappa_star)
    n_final = final.n_star
    if max(d_acc.n_star, d_rej.n_star) >= n_final:
        n_final = max(d_acc.n_star, d_rej.n_star) + 1
    return ThreeStageDesign(
        alpha, beta, d_acc.n_star, d_rej.n_star, n_final,
        kappa_accept, d_rej.kappa_star, final.kappa_star,
        gamma, delta, (d_acc, d_rej, final))


def design_four_stage_hat(model: ModelSpec, alpha: float, beta: float,
                          budget: SimBudget = SimBudget(),
                          solver: Optional[FssSolver] = None) -> FourStageHatDesign:
    """4-stage design with a second accept stage; split (alpha/2, beta/3)."""
    solver = solver or FssSolver(model, budget)
    a2, b3 = alpha / 2, beta / 3
    final = solver.design(a2, b3)
    gamma, gamma2 = _argmin_2d(solver, b3, final.n_star, a2)
    delta = _argmin_1d(solver, a2, True, final.n_star, b3)
    d_acc = solver.design(gamma, b3)
    d_acc2 = solver.design(gamma2, b3)
    d_rej = solver.design(a2, delta)
    n0, n_mid, n_final = d_acc.n_star, d_acc2.n_star, final.n_star
    n_mid, n_final = repair_stage_sizes(n0, n_mid, n_final)
    kappa_accept = min(d_acc.kappa_star, d_rej.kappa_star)
    kappa_mid = min(d_acc2.kappa_star, d_rej.kappa_star)
    if n_final <= d_rej.n_star:
        n_final = d_rej.n_star + 1
    return FourStageHatDesign(
        alpha, beta, n0, d_rej.n_star, n_mid, n_final,
        kappa_accept, d_rej.kappa_star, kappa_mid, final.kappa_star,
        gamma, gamma2, delta, (d_acc, d_rej, d_acc2, final))


def design_four_stage_check(model: ModelSpec, alpha: float, beta: float,
                            budget: SimBudget = SimBudget(),
                            solver: Optional[FssSolver] = None,
                            ) -> FourStageCheckDesign:
    """4-stage design with a second reject stage; split (alpha/3, beta/2)."""
    solver = solver or FssSolver(model, budget)
    a3, b2 = alpha / 3, beta / 2
    final = solver.design(a3, b2)
    gamma = _argmin_1d(solver, b2, False, final.n_star, a3)
    delta, delta2 = _argmin_2d_alt(solver, a3, final.n_star, b2)
    d_acc = solver.design(gamma, b2)
    d_rej = solver.design(a3, delta)
    d_rej2 = solver.design(a3, delta2)
    n1, n_mid, n_final = d_rej.n_star, d_rej2.n_star, final.n_star
    n_mid, n_final = repair_stage_sizes(n1, n_mid, n_final)
    kappa_accept = min(d_acc.kappa_star, d_rej.kappa_star)
    kappa_mid = max(d_rej2.kappa_star, kappa_accept)
    if n_final <= d_acc.n_star:
        n_final = d_acc.n_star + 1
    return FourStageCheckDesign(
        alpha, beta, d_acc.n_star, n1, n_mid, n_final,
        kappa_accept, d_rej.kappa_star, kappa_mid, final.kappa_star,
        gamma, delta, delta2, (d_acc, d_rej, d_rej2, final))


def _argmin_2d_alt(solver: FssSolver, other_level: float, big_n: int,
                   lo: float, points: int = GRID_POINTS_2D) -> Tuple[float, float]:
    """Mirror of :func:`_argmin_2d` with the fixed level first in the pair."""
    grid = _log_grid(lo, points)
    sizes = {float(x): solver.design(other_level, x).n_star for x in grid}
    best, best_u = None, math.inf
    for x in grid:
        n_first = sizes[float(x)]
        for x2 in grid:
            if not x2 < x:
                continue
            n_mid = sizes[float(x2)]
            u = n_first + (n_mid - n_first) * x + (big_n - n_mid) * x2
            if u < best_u:
                best, best_u = (float(x), float(x2)), u
    return best


# ---------------------------------------------------------------------------
# execution


class _Feed:
    """Cursor over a statistic path, 1-based access by observation count."""

    def __init__(self, values: Iterable[float]):
        self._it = iter(values)
        self._buf: list = []

    def at(self, n: int) -> float:
        while len(self._buf) < n:
            try:
                self._buf.append(next(self._it))
            except StopIteration:
                raise TruncatedFeedError(
                    f"path feed ended after {len(self._buf)} observations, "
                    f"needed {n}") from None
        return self._buf[n - 1]


class _Stages:
    """Counts sampling batches as the cursor advances."""

    def __init__(self):
        self.batches = 0
        self.cur = 0

    def advance(self, to: int):
        if to > self.cur:
            self.batches += 1
            self.cur = to


def run_three_stage(design: ThreeStageDesign, path_feed) -> RunOutcome:
    """Execute the 3-stage test against a statistic path."""
    d = design
    f = _Feed(path_feed)
    st = _Stages()
    st.advance(min(d.n_accept, d.n_reject))
    if d.n_accept <= d.n_reject and f.at(d.n_accept) <= d.kappa_accept:
        return RunOutcome(Decision.ACCEPT, d.n_accept, st.batches)
    if d.n_reject <= d.n_accept and f.at(d.n_reject) > d.kappa_reject:
        return RunOutcome(Decision.REJECT, d.n_reject, st.batches)
    st.advance(max(d.n_accept, d.n_reject))
    if d.n_accept <= d.n_reject and f.at(d.n_reject) > d.kappa_reject:
        return RunOutcome(Decision.REJECT, d.n_reject, st.batches)
    if d.n_reject <= d.n_accept and f.at(d.n_accept) <= d.kappa_accept:
        return RunOutcome(Decision.ACCEPT, d.n_accept, st.batches)
    st.advance(d.n_final)
    if f.at(d.n_final) > d.kappa_final:
        return RunOutcome(Decision.REJECT, d.n_final, st.batches)
    return RunOutcome(Decision.ACCEPT, d.n_final, st.batches)


def run_four_stage_hat(design: FourStageHatDesign, path_feed) -> RunOutcome:
    """Execute the accept-extended 4-stage test against a statistic path."""
    d = design
    n0, n1, m, nf = d.n_accept, d.n_reject, d.n_accept2, d.n_final
    k0, k1, km, kf = (d.kappa_accept, d.kappa_reject, d.kappa_accept2,
                      d.kappa_final)
    f = _Feed(path_feed)
    st = _Stages()
    st.advance(min(n0, n1))
    if n0 <= n1 and f.at(n0) <= k0:
        return RunOutcome(Decision.ACCEPT, n0, st.batches)
    if n1 <= n0 and f.at(n1) > k1:
        return RunOutcome(Decision.REJECT, n1, st.batches)
    st.advance(min(max(n0, n1), m))
    if n0 <= n1 <= m and f.at(n1) > k1:
        return RunOutcome(Decision.REJECT, n1, st.batches)
    if n0 <= m <= n1 and f.at(m) <= km:
        return RunOutcome(Decision.ACCEPT, m, st.batches)
    if n1 <= n0 and f.at(n0) <= k0:
        return RunOutcome(Decision.ACCEPT, n0, st.batches)
    st.advance(max(n1, m))
    if n1 <= m and f.at(m) <= km:
        return RunOutcome(Decision.ACCEPT, m, st.batches)
    if m <= n1 and f.at(n1) > k1:
        return RunOutcome(Decision.REJECT, n1, st.batches)
    st.advance(nf)
    if f.at(nf) > kf:
        return RunOutcome(Decision.REJECT, nf, st.batches)
    return RunOutcome(Decision.ACCEPT, nf, st.batches)


def run_four_stage_check(design: FourStageCheckDesign, path_feed) -> RunOutcome:
    """Execute the reject-extended 4-stage test (mirror of the hat test)."""
    d = design
    n0, n1, m, nf = d.n_accept, d.n_reject, d.n_reject2, d.n_final
    k0, k1, km, kf = (d.kappa_accept, d.kappa_reject, d.kappa_reject2,
                      d.kappa_final)
    f = _Feed(path_feed)
    st = _Stages()
    st.advance(min(n0, n1))
    if n1 <= n0 and f.at(n1) > k1:
        return RunOutcome(Decision.REJECT, n1, st.batches)
    if n0 <= n1 and f.at(n0) <= k0:
        return RunOutcome(Decision.ACCEPT, n0, st.batches)
    st.advance(min(max(n0, n1), m))
    if n1 <= n0 <= m and f.at(n0) <= k0:
        return RunOutcome(Decision.ACCEPT, n0, st.batches)
    if n1 <= m <= n0 and f.at(m) > km:
        return RunOutcome(Decision.REJECT, m, st.batches)
    if n0 <= n1 and f.at(n1) > k1:
        return RunOutcome(Decision.REJECT, n1, st.batches)
    st.advance(max(n0, m))
    if n0 <= m and f.at(m) > km:
        return RunOutcome(Decision.REJECT, m, st.batches)
    if m <= n0 and f.at(n0) <= k0:
        return RunOutcome(Decision.ACCEPT, n0, st.batches)
    st.advance(nf)
    if f.at(nf) > kf:
        return RunOutcome(Decision.REJECT, nf, st.batches)
    return RunOutcome(Decision.ACCEPT, nf, st.batches)


def run_sprt(design: SprtDesign, llr_feed) -> RunOutcome:
    """Execute the SPRT against a log-likelihood-ratio path.

    The feed must be effectively unbounded; a hard cap of ten million steps
    guards runaway paths, producing a flagged outcome.
    """
    lo, hi = -design.accept_boundary, design.reject_boundary
    n = 0
    for value in llr_feed:
        n += 1
        if value >= hi:
            return RunOutcome(Decision.REJECT, n, n)
        if value <= lo:
            return RunOutcome(Decision.ACCEPT, n, n)
        if n >= SPRT_STEP_CAP:
            return RunOutcome(Decision.ACCEPT if value < 0 else Decision.REJECT,
                              n, n, capped=True)
    raise TruncatedFeedError(f"LLR feed ended after {n} steps with no decision")


def ess_bounds(design, which: str) -> Tuple[float, float]:
    """Closed-form (lower, upper) bounds on the expected sample size.

    `which` selects the hypothesis: "null" or "alternative".  The bounds
    plug the design's levels and free parameters into the stage-size
    identities.
    """
    if which not in ("null", "alternative"):
        raise ValueError("which must be 'null' or 'alternative'")
    if isinstance(design, ThreeStageDesign):
        a2, b2 = design.alpha / 2, design.beta / 2
        if which == "null":
            n0, big_n, g = design.n_accept, design.n_final, design.gamma
            return (n0 * (1 - a2) + (big_n - n0) * (g - a2),
                    n0 + (big_n - n0) * g)
        n1, big_n, dl = design.n_reject, design.n_final, design.delta
        return (n1 * (1 - b2) + (big_n - n1) * (dl - b2),
                n1 + (big_n - n1) * dl)
    if isinstance(design, FourStageHatDesign):
        a2, b3 = design.alpha / 2, design.beta / 3
        if which == "null":
            n0, m, big_n = design.n_accept, design.n_accept2, design.n_final
            g, g2 = design.gamma, design.gamma2
            lower = (n0 * (1 - a2) + (m - n0) * (g - a2)
                     + (big_n - m) * max(g + g2 - 1 - a2, 0.0))
            return lower, n0 + (m - n0) * g + (big_n - m) * g2
        n1, big_n, dl = design.n_reject, design.n_final, design.delta
        return (n1 * (1 - 2 * b3) + (big_n - n1) * (dl - 2 * b3),
                n1 + (big_n - n1) * dl)
    if isinstance(design, FourStageCheckDesign):
        a3, b2 = design.alpha / 3, design.beta / 2
        if which == "null":
            n0, big_n, g = design.n_accept, design.n_final, design.gamma
            return (n0 * (1 - 2 * a3) + (big_n - n0) * (g - 2 * a3),
                    n0 + (big_n - n0) * g)
        n1, m, big_n = design.n_reject, design.n_reject2, design.n_final
        dl, dl2 = design.delta, design.delta2
        lower = (n1 * (1 - b2) + (m - n1) * (dl - b2)
                 + (big_n - m) * max(dl + dl2 - 1 - b2, 0.0))
        return lower, n1 + (m - n1) * dl + (big_n - m) * dl2
    raise NotApplicableError("expected-sample-size bounds exist for the "
                             "multistage designs only")
