"""Regime classification from the unit-interval noise energies.

The decision is made on ``a(n) = theta^2(n) log n`` over the trailing half of
the horizon, never on pointwise sigma^2(t) log t, so schedules with spikes
are handled. A finite horizon cannot prove a limit: the thresholds below
are conservative defaults and closed-form family limits take precedence.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from .errors import DomainError
from .schedule import ScheduleStatistics, schedule_statistics

__all__ = [
    "Regime", "Confidence", "Thresholds", "LEstimate", "RegimeClassification",
    "PartialSumDiagnostics", "normal_cdf", "normal_sf", "normal_ppf",
    "s_prime_partial", "s_partial", "estimate_L", "classify", "critical_epsilon",
    "dyadic_growth", "epsilon_grid",
]

MIN_HORIZON = 64


class Regime(str, enum.Enum):
    CONVERGENT = "Convergent"
    BOUNDED = "BoundedNonConvergent"
    RECURRENT = "Recurrent"
    INCONCLUSIVE = "Inconclusive"


class Confidence(str, enum.Enum):
    ANALYTIC = "Analytic"
    HIGH = "NumericHigh"
    LOW = "NumericLow"


@dataclass(frozen=True)
class Thresholds:
    """Finite-horizon decision thresholds.

    delta_zero: tail values of a(n) below this count as a zero limit.
    delta_inf: tail values above this count as an infinite limit.
    elasticity: |d log a / d log log n| beyond this is read as a(n) drifting
        to 0 (negative) or to infinity (positive) like a power of log n.
    spread: tail max/min ratio above which liminf and limsup disagree.
    l2_tail: tail sum of theta^2 below this (and non-increasing) reads as
        sigma in L^2.
    """

    delta_zero: float = 1e-3
    delta_inf: float = 50.0
    elasticity: float = 0.25
    spread: float = 10.0
    l2_tail: float = 1e-8


# --------------------------------------------------------------------------
# normal distribution

def normal_cdf(x):
    """Standard normal distribution function, Phi(-inf) = 0, Phi(inf) = 1.

    Uses the complementary error function, ``Phi(x) = erfc(-x/sqrt 2)/2``,
    which keeps full relative accuracy in the lower tail.
    """
    if np.ndim(x) == 0:
        x = float(x)
        if math.isnan(x):
            raise DomainError("normal_cdf of NaN")
        return 0.5 * math.erfc(-x / math.sqrt(2.0))
    return ndtr(np.asarray(x, dtype=float))


def normal_sf(x):
    """1 - Phi(x), accurate for large x."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(float(x) / math.sqrt(2.0))
    return ndtr(-np.asarray(x, dtype=float))


@lru_cache(maxsize=4096)
def normal_ppf(p):
    """Inverse of :func:`normal_cdf` by bisection; exact at the endpoints."""
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise DomainError("probability must lie in [0, 1]")
    if p == 0.0:
        return -math.inf
    if p == 1.0:
        return math.inf
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4e-16 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# S and S' partial sums

@dataclass
class PartialSumDiagnostics:
    epsilon: float
    terms: np.ndarray = field(repr=False)
    partial_sum: float
    truncation_n: int

    def cumulative(self):
        return np.cumsum(self.terms)


def _theta_sq(stats_or_seq):
    if isinstance(stats_or_seq, ScheduleStatistics):
        return stats_or_seq.theta_sq
    return np.asarray(stats_or_seq, dtype=float)


def _check_sum_args(th2, epsilon, N):
    if not epsilon > 0:
        raise DomainError("epsilon must be > 0")
    N = th2.size if N is None else int(N)
    if N < 0 or N > th2.size:
        raise DomainError(f"N must lie in [0, {th2.size}]")
    return N


def s_prime_partial(stats, epsilon, N=None):
    """sum_{n<N} theta(n) exp(-eps^2 / (2 theta^2(n))), zero summand where theta(n) = 0."""
    th2 = _theta_sq(stats)
    N = _check_sum_args(th2, epsilon, N)
    t2 = th2[:N]
    terms = np.zeros(N)
    pos = t2 > 0
    with np.errstate(under="ignore"):
        terms[pos] = np.sqrt(t2[pos]) * np.exp(-0.5 * epsilon * epsilon / t2[pos])
    return PartialSumDiagnostics(float(epsilon), terms, math.fsum(terms), N)


def s_partial(stats, epsilon, N=None):
    """sum_{n<N} (1 - Phi(eps / theta(n))), zero summand where theta(n) = 0."""
    th2 = _theta_sq(stats)
    N = _check_sum_args(th2, epsilon, N)
    t2 = th2[:N]
    terms = np.zeros(N)
    pos = t2 > 0
    terms[pos] = normal_sf(epsilon / np.sqrt(t2[pos]))
    return PartialSumDiagnostics(float(epsilon), terms, math.fsum(terms), N)


def dyadic_growth(terms, kmin=10, kmax=None, slope_cut=-0.25):
    """Label a series ``"bounded"`` or ``"divergent"`` from its dyadic block sums.

    Block k sums the terms with index in ``[2^k, 2^(k+1))``. A summable series
    with polynomially decaying terms has block sums falling geometrically; the
    least-squares slope of log2(block sum) against k is compared with
    ``slope_cut``.
    """
    terms = np.asarray(terms, dtype=float)
    if kmax is None:
        kmax = int(math.floor(math.log2(terms.size))) - 1
    blocks = np.array([math.fsum(terms[2 ** k: 2 ** (k + 1)]) for k in range(kmin, kmax + 1)])
    if np.all(blocks <= 0):
        return "bounded", -math.inf
    with np.errstate(divide="ignore"):
        y = np.log2(np.maximum(blocks, 1e-300))
    k = np.arange(kmin, kmax + 1, dtype=float)
    slope = float(np.polyfit(k, y, 1)[0])
    return ("bounded" if slope < slope_cut else "divergent"), slope


def epsilon_grid(epsilon_prime):
    """Logarithmic grid around a critical value, eps' * {1/4, 1/2, 1, 2, 4}."""
    return [epsilon_prime * f for f in (0.25, 0.5, 1.0, 2.0, 4.0)]


def critical_epsilon(L):
    """sqrt(2L): the S' threshold when theta^2(n) log n -> L."""
    if L < 0 or math.isnan(L):
        raise DomainError("L must be >= 0")
    if math.isinf(L):
        raise DomainError("L must be finite")
    return math.sqrt(2.0 * L)


# --------------------------------------------------------------------------
# limit estimation

@dataclass
class LEstimate:
    """Tail summary of a(n) = theta^2(n) log n.

    ``value`` is the tail mean (``math.inf`` for divergence, ``None`` when
    inconclusive); ``slope`` the least-squares slope of a(n) against
    log log n; ``elasticity`` the slope of log a(n) against log log n.
    """

    value: float | None
    slope: float
    elasticity: float
    dispersion: float
    status: str
    tail_n: np.ndarray = field(repr=False)
    tail_a: np.ndarray = field(repr=False)
    l2_tail_sum: float = math.nan


def estimate_L(stats, thresholds=Thresholds()):
    """Estimate lim theta^2(n) log n from n in [horizon/2, horizon).

    ``status`` is one of ``"zero"``, ``"l2"``, ``"finite"``, ``"infinite"``,
    ``"oscillating"`` or ``"short"``.
    """
    th2 = _theta_sq(stats)
    N = th2.size
    lo = max(N // 2, 2)
    n = np.arange(lo, N, dtype=float)
    tail = th2[lo:]
    a = tail * np.log(n)
    if N < MIN_HORIZON:
        return LEstimate(None, math.nan, math.nan, math.nan, "short", n, a)

    ll = np.log(np.log(n))
    slope = float(np.polyfit(ll, a, 1)[0]) if np.ptp(a) > 0 else 0.0
    mean = float(np.mean(a))
    amax, amin = float(np.max(a)), float(np.min(a))
    dispersion = math.inf if amin <= 0 < amax else (amax / amin if amin > 0 else 1.0)
    if np.all(a > 0):
        elasticity = float(np.polyfit(ll, np.log(a), 1)[0])
    else:
        elasticity = math.nan

    q = max(tail.size // 4, 1)
    tail_sum = math.fsum(tail)
    non_increasing = math.fsum(tail[-q:]) <= math.fsum(tail[:q])
    est = lambda value, status: LEstimate(value, slope, elasticity, dispersion, status, n, a, tail_sum)  # noqa: E731

    if tail_sum < thresholds.l2_tail and non_increasing:
        return est(0.0, "l2")
    if amax < thresholds.delta_zero:
        return est(0.0, "zero")
    if amin > thresholds.delta_inf and slope > 0:
        return est(math.inf, "infinite")
    if dispersion > thresholds.spread:
        # a(n) sweeping over a decade inside the window: accept only a clean
        # monotone decay, anything else means liminf and limsup disagree
        if elasticity <= -thresholds.elasticity and np.all(np.diff(a) <= 0):
            return est(0.0, "zero")
        return est(None, "oscillating")
    if elasticity <= -thresholds.elasticity:
        return est(0.0, "zero")
    if elasticity >= thresholds.elasticity and slope > 0:
        return est(math.inf, "infinite")
    return est(mean, "finite")


# --------------------------------------------------------------------------
# classification

@dataclass
class RegimeClassification:
    regime: Regime
    L_estimate: float | None
    epsilon_prime: float | None
    confidence: Confidence
    evidence: dict
    sigma_limit: float | None = None

    @property
    def sharp_level(self):
        """sqrt(2 lim Sigma^2): the exact limsup |Y| when Sigma^2 has a full limit."""
        if self.sigma_limit is None or math.isinf(self.sigma_limit):
            return None
        return math.sqrt(2.0 * self.sigma_limit)

    def to_dict(self):
        L = self.L_estimate
        return {
            "regime": self.regime.value,
            "L_estimate": "inf" if L is not None and math.isinf(L) else L,
            "epsilon_prime": self.epsilon_prime,
            "confidence": self.confidence.value,
            "sigma_limit": self.sigma_limit,
            "evidence": self.evidence,
        }

    @classmethod
    def from_dict(cls, d):
        L = d["L_estimate"]
        return cls(
            Regime(d["regime"]),
            math.inf if L == "inf" else L,
            d["epsilon_prime"],
            Confidence(d["confidence"]),
            d.get("evidence", {}),
            d.get("sigma_limit"),
        )


_STATUS_REGIME = {
    "zero": Regime.CONVERGENT,
    "l2": Regime.CONVERGENT,
    "finite": Regime.BOUNDED,
    "infinite": Regime.RECURRENT,
    "oscillating": Regime.INCONCLUSIVE,
    "short": Regime.INCONCLUSIVE,
}


def _regime_from_L(L, in_l2=False):
    if in_l2 or L == 0:
        return Regime.CONVERGENT
    if math.isinf(L):
        return Regime.RECURRENT
    return Regime.BOUNDED


def classify(schedule, horizon=2048, thresholds=Thresholds(), use_analytic=True, rtol=1e-8):
    """Place ``schedule`` in the convergent / bounded / recurrent trichotomy.

    Numeric evidence is always computed over ``horizon`` unit intervals. When
    ``use_analytic`` is set and the family carries closed-form limits those
    decide the regime (confidence ``Analytic``); the numeric verdict is
    kept in ``evidence["numeric_regime"]``.
    """
    if horizon < MIN_HORIZON:
        raise DomainError(f"horizon must be >= {MIN_HORIZON}")
    stats = schedule_statistics(schedule, horizon, rtol=rtol)
    est = estimate_L(stats, thresholds)
    numeric = _STATUS_REGIME[est.status]

    k = max(est.tail_n.size // 16, 1)
    evidence = {
        "horizon": int(horizon),
        "status": est.status,
        "slope": est.slope,
        "elasticity": est.elasticity,
        "dispersion": est.dispersion,
        "l2_tail_sum": est.l2_tail_sum,
        "tail_samples": [[int(n), float(a)] for n, a in zip(est.tail_n[::k], est.tail_a[::k])],
        "numeric_regime": numeric.value,
        "numeric_L": est.value,
    }

    asym = schedule.asymptotics() if use_analytic else None
    if asym is not None:
        regime = _regime_from_L(asym.L, asym.in_L2)
        L = 0.0 if regime is Regime.CONVERGENT else asym.L
        eps = critical_epsilon(L) if regime is not Regime.RECURRENT else None
        sig = asym.sigma_limit if regime is Regime.BOUNDED else None
        return RegimeClassification(regime, L, eps, Confidence.ANALYTIC, evidence, sig)

    if numeric is Regime.CONVERGENT:
        L, eps = 0.0, 0.0
    elif numeric is Regime.BOUNDED:
        L, eps = est.value, critical_epsilon(est.value)
    elif numeric is Regime.RECURRENT:
        L, eps = math.inf, None
    else:
        L, eps = None, None
    if numeric is Regime.INCONCLUSIVE:
        conf = Confidence.LOW
    elif est.status == "l2" or (
        np.isfinite(est.elasticity) and abs(est.elasticity) < 0.5 * thresholds.elasticity
    ) or (np.isfinite(est.elasticity) and abs(est.elasticity) > 2 * thresholds.elasticity):
        conf = Confidence.HIGH
    else:
        conf = Confidence.LOW
    return RegimeClassification(numeric, L, eps, conf, evidence)

