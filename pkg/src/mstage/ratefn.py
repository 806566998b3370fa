"""Large-deviation rate functions for each model/statistic pair.

For every pair the limiting normalized cumulant generating functions of the
statistic under the two hypotheses are available: polynomial for the
Gaussian cases, the log of the larger root of a quadratic for the AR(1)
likelihood ratio (with an explicit admissibility region in the tilt
variable), and the log Perron root of a tilted transition matrix for the
Markov chain.  The decay rates of the two error probabilities are their
convex conjugates, computed by a bracketing golden-section search; where a
closed form exists (Gaussian, binarized, Yule-Walker) it is used directly
and the numeric transform is cross-checked in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import NotApplicableError, NumericError, RangeError
from .models import (
    Ar1,
    GaussianMean,
    Hypothesis,
    ModelSpec,
    Statistic,
    bernoulli_kl,
    statistic_limit,
)

_GOLD = (math.sqrt(5) - 1) / 2
_THETA_CAP = 1e6
_PLATEAU = 1e-12


@dataclass(frozen=True)
class CumulantLimit:
    """Limiting cumulant of the statistic under one hypothesis.

    ``fn`` returns +inf outside the effective domain; ``theta_lo/theta_hi``
    describe the domain interval, with flags telling whether each finite
    endpoint belongs to it.
    """

    hypothesis: Hypothesis
    fn: Callable[[float], float]
    theta_lo: float
    theta_hi: float
    lo_closed: bool = False
    hi_closed: bool = False

    def __call__(self, theta: float) -> float:
        return self.fn(theta)

    def inner(self, theta: float) -> float:
        """Clamp theta strictly inside the effective domain."""
        scale = 1.0
        for edge in (self.theta_lo, self.theta_hi):
            if math.isfinite(edge):
                scale = max(scale, abs(edge))
        eps = 1e-12 * scale
        lo = self.theta_lo + eps if math.isfinite(self.theta_lo) else -math.inf
        hi = self.theta_hi - eps if math.isfinite(self.theta_hi) else math.inf
        return min(max(theta, lo), hi)


@dataclass(frozen=True)
class RateFunctions:
    """The pair of error-exponent functions on the limit interval [J0, J1].

    ``i0``/``i1`` are the KL-type rates of the likelihood ratio under the
    two hypotheses (the same for every statistic of the model); they enter
    the relative-efficiency computation.
    """

    model: ModelSpec
    j0: float
    j1: float
    psi0_fn: Callable[[float], float]
    psi1_fn: Callable[[float], float]
    cumulants: Optional[Tuple[CumulantLimit, CumulantLimit]] = None
    i0: Optional[float] = None
    i1: Optional[float] = None


# ---------------------------------------------------------------------------
# cumulant limits


def perron_root(mat: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Largest eigenvalue of an entrywise nonnegative irreducible matrix.

    Power iteration; the matrices here are small and aperiodic, so
    convergence is guaranteed.
    """
    v = np.full(mat.shape[0], 1.0 / mat.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        w = mat @ v
        new = float(w.sum())
        if new <= 0 or not math.isfinite(new):
            raise NumericError("power iteration produced a non-positive root")
        v = w / new
        if abs(new - lam) <= tol * max(1.0, new):
            return new
        lam = new
    raise NumericError("power iteration did not converge")


def _markov_pair_matrix(p: float, mu: float) -> np.ndarray:
    """Transition matrix of the pair chain (X_{n-1}, X_n), two-state case."""
    pi = np.array([[p, 1 - p], [1 - mu, mu]])
    out = np.zeros((4, 4))
    for i1 in range(2):
        for i2 in range(2):
            for j in range(2):
                out[2 * i1 + i2, 2 * i2 + j] = pi[i2, j]
    return out


def _markov_llr_cumulant(model: ModelSpec, hyp: Hypothesis) -> CumulantLimit:
    k = model.kind
    base = _markov_pair_matrix(k.p, model.hyp_param(hyp))
    r = np.zeros(4)
    r[2] = math.log((1 - k.mu1) / (1 - k.mu0))  # landing in (1, 0)
    r[3] = math.log(k.mu1 / k.mu0)  # landing in (1, 1)

    def fn(theta: float) -> float:
        return math.log(perron_root(base * np.exp(theta * r)[None, :]))

    return CumulantLimit(hyp, fn, -math.inf, math.inf)


def _markov_mean_cumulant(model: ModelSpec, hyp: Hypothesis) -> CumulantLimit:
    k = model.kind
    mu = model.hyp_param(hyp)
    pi = np.array([[k.p, 1 - k.p], [1 - mu, mu]])
    v = np.array([0.0, 1.0])

    def fn(theta: float) -> float:
        if theta > 690:  # factor exp(theta) out of the tilted second column
            return theta + math.log(mu)
        return math.log(perron_root(pi * np.exp(theta * v)[None, :]))

    return CumulantLimit(hyp, fn, -math.inf, math.inf)


def _ar1_admissible(theta: float, mu: float, mu0: float, mu1: float) -> bool:
    # admissibility checked literally through the p/q inequalities
    p = 1 + mu * mu + (mu1 - mu0) * (mu1 + mu0) * theta
    q = -mu - (mu1 - mu0) * theta
    q2 = q * q
    m2 = mu * mu
    if m2 < p <= 2 * m2 and q2 <= m2 * (p - m2):
        return True
    if 2 * m2 < p < 2 and p > 2 * abs(q):
        return True
    if p >= 2 and q2 <= p - 1:
        return True
    return False


def _ar1_llr_cumulant(model: ModelSpec, hyp: Hypothesis) -> CumulantLimit:
    k = model.kind
    mu = model.hyp_param(hyp)
    mu0, mu1 = k.mu0, k.mu1

    def fn(theta: float) -> float:
        if not _ar1_admissible(theta, mu, mu0, mu1):
            return math.inf
        p = 1 + mu * mu + (mu1 - mu0) * (mu1 + mu0) * theta
        q = -mu - (mu1 - mu0) * theta
        disc = p * p - 4 * q * q
        root = 0.5 * (p + math.sqrt(max(disc, 0.0)))
        return -0.5 * math.log(root)

    def edge(direction: int) -> float:
        step = 0.25
        theta = 0.0
        while _ar1_admissible(theta + direction * step, mu, mu0, mu1):
            theta += direction * step
            step *= 2
            if abs(theta) > _THETA_CAP:
                return direction * math.inf
        lo, hi = theta, theta + direction * step
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if _ar1_admissible(mid, mu, mu0, mu1):
                lo = mid
            else:
                hi = mid
        return lo

    lo = edge(-1)
    hi = edge(+1)
    return CumulantLimit(hyp, fn, lo, hi,
                         lo_closed=math.isfinite(lo), hi_closed=math.isfinite(hi))


def cumulant_limit(model: ModelSpec, hyp: Hypothesis) -> CumulantLimit:
    """Limiting cumulant of the model's statistic under hypothesis `hyp`."""
    k = model.kind
    if isinstance(k, GaussianMean):
        eta = k.eta
        big_i = 2 * eta * eta
        if model.statistic == Statistic.AVG_LLR:
            sign = -1.0 if hyp == Hypothesis.P0 else 1.0
            return CumulantLimit(
                hyp, lambda t: t * (t + sign) * big_i, -math.inf, math.inf)
        if model.statistic == Statistic.SAMPLE_MEAN:
            mu = model.hyp_param(hyp)
            return CumulantLimit(
                hyp, lambda t: mu * t + 0.5 * t * t, -math.inf, math.inf)
        j = statistic_limit(model, model.hyp_param(hyp))

        def binar(t: float) -> float:
            if t > 690:
                return t + math.log(j)
            return math.log(j * math.exp(t) + 1 - j)

        return CumulantLimit(hyp, binar, -math.inf, math.inf)
    if isinstance(k, Ar1):
        if model.statistic == Statistic.AVG_LLR:
            return _ar1_llr_cumulant(model, hyp)
        raise NotApplicableError(
            "the Yule-Walker statistic has a closed-form rate, no cumulant evaluator")
    if model.statistic == Statistic.AVG_LLR:
        return _markov_llr_cumulant(model, hyp)
    return _markov_mean_cumulant(model, hyp)


# ---------------------------------------------------------------------------
# transforms


def _golden_max(f: Callable[[float], float], a: float, c: float,
                tol: float = 1e-10) -> Tuple[float, float]:
    b = c - _GOLD * (c - a)
    d = a + _GOLD * (c - a)
    fb, fd = f(b), f(d)
    while (c - a) > tol:
        if fb >= fd:
            c, d, fd = d, b, fb
            b = c - _GOLD * (c - a)
            fb = f(b)
        else:
            a, b, fb = b, d, fd
            d = a + _GOLD * (c - a)
            fd = f(d)
    x = 0.5 * (a + c)
    return x, f(x)


def legendre(cumulant: CumulantLimit, kappa: float) -> float:
    """Convex conjugate sup_theta {theta*kappa - phi(theta)}.

    Returns +inf when the supremum diverges, i.e. kappa lies outside the
    closure of the attainable slopes.
    """

    def h(theta: float) -> float:
        v = cumulant(theta)
        return theta * kappa - v if math.isfinite(v) else -math.inf

    h0 = h(0.0)
    if not math.isfinite(h0):
        raise NumericError("cumulant must be finite at theta = 0")

    def expand(direction: int):
        """Walk outward while the objective increases.

        Returns (outermost theta, diverges); when the walk stops on a
        decrease or a domain edge the supremum sits inside [0, theta].
        """
        t_prev, h_prev = 0.0, h0
        step = 0.5
        while True:
            t_next = cumulant.inner(t_prev + direction * step)
            if (t_next - t_prev) * direction <= 0:
                return t_prev, False  # pinned at a domain edge
            h_next = h(t_next)
            if h_next <= h_prev:
                return t_next, False
            t_prev, h_prev = t_next, h_next
            if abs(t_next) >= _THETA_CAP:
                back = cumulant.inner(t_next - direction * 0.5 * step)
                gain = h_next - h(back)
                return t_next, gain > _PLATEAU
            step *= 2

    right, rdiv = expand(+1)
    left, ldiv = expand(-1)
    if rdiv or ldiv:
        return math.inf
    a, c = min(left, right), max(left, right)
    if c - a <= 0:
        return max(h0, 0.0)
    _, val = _golden_max(h, a, c)
    return max(val, h0, 0.0)


def _slope(cumulant: CumulantLimit, theta: float) -> float:
    """Cumulant derivative by central differences, relative step 1e-5."""
    h = 1e-5 * max(1.0, abs(theta))
    lo = cumulant.inner(theta - h)
    hi = cumulant.inner(theta + h)
    if hi <= lo:
        raise NumericError("domain too thin for a central difference")
    flo, fhi = cumulant(lo), cumulant(hi)
    if not (math.isfinite(flo) and math.isfinite(fhi)):
        raise NumericError("cumulant not finite where a derivative was requested")
    return (fhi - flo) / (hi - lo)


def theta_of_slope(cumulant: CumulantLimit, kappa: float) -> float:
    """Inverse of the cumulant derivative: theta with phi'(theta) = kappa."""
    s0 = _slope(cumulant, 0.0)
    if abs(s0 - kappa) <= 1e-8:
        return 0.0
    direction = 1 if s0 < kappa else -1
    t_prev, s_prev = 0.0, s0
    step = 0.5
    while True:
        t_next = cumulant.inner(t_prev + direction * step)
        advanced = (t_next - t_prev) * direction > 0
        s_next = _slope(cumulant, t_next) if advanced else s_prev
        if advanced and (s_next - kappa) * direction >= 0:
            break  # bracketed
        if not advanced or abs(t_next) >= _THETA_CAP:
            lo_s = _slope(cumulant, cumulant.inner(-_THETA_CAP))
            hi_s = _slope(cumulant, cumulant.inner(_THETA_CAP))
            raise RangeError(
                f"slope {kappa:.6g} not attainable; attainable slopes lie in "
                f"about ({lo_s:.6g}, {hi_s:.6g})")
        t_prev, s_prev = t_next, s_next
        step *= 2
    lo, hi = (t_prev, t_next) if direction > 0 else (t_next, t_prev)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = _slope(cumulant, mid)
        if abs(s - kappa) <= 1e-8:
            return mid
        if s < kappa:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(_slope(cumulant, mid) - kappa) <= 1e-6:
        return mid
    raise NumericError("slope inversion did not reach tolerance")


# ---------------------------------------------------------------------------
# rate-function pairs


def rate_functions(model: ModelSpec) -> RateFunctions:
    """Build the rate-function pair for the model's statistic."""
    k = model.kind
    stat = model.statistic
    if isinstance(k, GaussianMean):
        eta = k.eta
        big_i = 2 * eta * eta
        cums = (cumulant_limit(model, Hypothesis.P0),
                cumulant_limit(model, Hypothesis.P1))
        if stat == Statistic.AVG_LLR:
            return RateFunctions(
                model, -big_i, big_i,
                lambda x: (big_i + x) ** 2 / (4 * big_i),
                lambda x: (big_i - x) ** 2 / (4 * big_i),
                cums, i0=big_i, i1=big_i)
        if stat == Statistic.SAMPLE_MEAN:
            return RateFunctions(
                model, -eta, eta,
                lambda x: 0.5 * (x + eta) ** 2,
                lambda x: 0.5 * (x - eta) ** 2,
                cums, i0=big_i, i1=big_i)
        j0 = statistic_limit(model, model.mu0)
        j1 = statistic_limit(model, model.mu1)
        return RateFunctions(
            model, j0, j1,
            lambda x: bernoulli_kl(x, j0) if 0 <= x <= 1 else math.inf,
            lambda x: bernoulli_kl(x, j1) if 0 <= x <= 1 else math.inf,
            cums, i0=big_i, i1=big_i)
    if isinstance(k, Ar1):
        delta = k.mu1 - k.mu0
        # I1 follows the displayed a.s. limit of the average LLR at mu1
        i0 = delta * delta / (2 * (1 - k.mu0 ** 2))
        i1 = delta * delta / (2 * (1 - k.mu1 ** 2))
        if stat == Statistic.AVG_LLR:
            cums = (cumulant_limit(model, Hypothesis.P0),
                    cumulant_limit(model, Hypothesis.P1))
            return RateFunctions(
                model, -i0, i1,
                lambda x: legendre(cums[0], x),
                lambda x: legendre(cums[1], x),
                cums, i0=i0, i1=i1)

        def yw_rate(kappa: float, mu: float) -> float:
            if not -1 < kappa < 1:
                return math.inf
            return 0.5 * math.log((1 + mu * mu - 2 * mu * kappa) / (1 - kappa * kappa))

        return RateFunctions(
            model, k.mu0, k.mu1,
            lambda x: yw_rate(x, k.mu0),
            lambda x: yw_rate(x, k.mu1),
            None, i0=i0, i1=i1)
    occ = lambda mu: (1 - k.p) / (2 - k.p - mu)
    i0 = occ(k.mu0) * bernoulli_kl(k.mu0, k.mu1)
    i1 = occ(k.mu1) * bernoulli_kl(k.mu1, k.mu0)
    cums = (cumulant_limit(model, Hypothesis.P0),
            cumulant_limit(model, Hypothesis.P1))
    if stat == Statistic.AVG_LLR:
        j0, j1 = -i0, i1
    else:
        j0, j1 = occ(k.mu0), occ(k.mu1)
    return RateFunctions(
        model, j0, j1,
        lambda x: legendre(cums[0], x),
        lambda x: legendre(cums[1], x),
        cums, i0=i0, i1=i1)


def psi(rf: RateFunctions, i: int, kappa: float) -> float:
    """Error exponent psi_i at kappa (+inf outside the finite domain)."""
    fn = rf.psi0_fn if i == 0 else rf.psi1_fn
    return fn(kappa)


def chernoff_info(rf: RateFunctions) -> Tuple[float, float]:
    """The symmetric error exponent C and the crossing point of psi0, psi1."""
    span = rf.j1 - rf.j0
    lo = rf.j0 + 1e-9 * span
    hi = rf.j1 - 1e-9 * span
    f = lambda x: psi(rf, 0, x) - psi(rf, 1, x)
    if not (f(lo) < 0 < f(hi)):
        raise NumericError("psi0 - psi1 does not change sign on (J0, J1)")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= 1e-9:
            return psi(rf, 0, mid), mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(f(mid)) <= 1e-7:
        return psi(rf, 0, mid), mid
    raise NumericError("crossing search did not reach tolerance 1e-9")


def g_inverse(rf: RateFunctions, r: float) -> float:
    """kappa in (J0, J1) with psi0(kappa)/psi1(kappa) = r (r > 0)."""
    if not r > 0:
        raise RangeError("the rate ratio must be positive")
    span = rf.j1 - rf.j0
    lo = rf.j0 + 1e-12 * span
    hi = rf.j1 - 1e-12 * span

    def g(x: float) -> float:
        denom = psi(rf, 1, x)
        if denom <= 0:
            return math.inf
        return psi(rf, 0, x) / denom
    while g(lo) > r:
        gap = (lo - rf.j0) / 4
        if gap < 1e-300:
            return lo
        lo = rf.j0 + gap
    while g(hi) < r:
        gap = (rf.j1 - hi) / 4
        if gap < 1e-300:
            return hi
        hi = rf.j1 - gap
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = g(mid)
        if abs(val - r) <= 1e-8 * max(1.0, r):
            return mid
        if val < r:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def are(rf: RateFunctions) -> Tuple[float, float]:
    """Asymptotic relative efficiencies (psi1(J0)/I0, psi0(J1)/I1).

    Only defined for statistics other than the average LLR, whose
    efficiencies are identically 1.
    """
    if rf.model.statistic == Statistic.AVG_LLR:
        raise NotApplicableError("the average-LLR statistic has efficiency 1")
    return psi(rf, 1, rf.j0) / rf.i0, psi(rf, 0, rf.j1) / rf.i1
