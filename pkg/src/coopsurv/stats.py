"""Censored-survival evaluation statistics.

Pure functions over numpy arrays: scalar risk reduction of a hazard
vector, Harrell's concordance index, the Kaplan-Meier product-limit
estimator, the two-group log-rank test, the two-sided Wilcoxon
signed-rank test, and median-risk stratification.

The chi-square(1) upper tail needed by the log-rank test is evaluated
in-repo via the regularized incomplete gamma function (series /
continued-fraction), so this module has no statistical dependencies.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import UndefinedStatisticError, ValidationError
from .validation import check_finite_array


@dataclass(frozen=True)
class RiskOutcome:
    """One evaluated patient: predicted risk (higher = worse), follow-up
    time, and whether the event was observed."""

    risk: float
    time: float
    event: bool


@dataclass(frozen=True)
class KMCurve:
    times: np.ndarray          # distinct event times, ascending
    survival: np.ndarray       # S(t) at each event time, non-increasing
    at_risk: np.ndarray        # risk-set size just before each time
    events: np.ndarray         # events at each time

    def survival_at(self, t: float) -> float:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return 1.0 if idx < 0 else float(self.survival[idx])


@dataclass(frozen=True)
class LogRankResult:
    chi2: float
    p_value: float


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_nonzero: int
    degenerate: bool = False


def risk_from_hazards(hazards) -> float:
    """Scalar risk of a hazard vector: the negated expected discrete
    survival mass, -sum_k f_sur(H, k). Strictly increasing in every h_j."""
    h = check_finite_array(hazards, "hazards", ndim=1)
    if h.size == 0 or np.any(h <= 0.0) or np.any(h >= 1.0):
        raise ValidationError("hazards must be non-empty with every entry in (0, 1)")
    return float(-np.cumprod(1.0 - h).sum())


def _unpack_outcomes(risks, times=None, events=None):
    if times is None:
        triples = list(risks)
        risks = [o.risk for o in triples]
        times = [o.time for o in triples]
        events = [o.event for o in triples]
    r = check_finite_array(risks, "risks", ndim=1)
    t = check_finite_array(times, "times", ndim=1)
    e = np.asarray(events, dtype=bool)
    if not (r.shape == t.shape == e.shape):
        raise ValidationError(f"risks/times/events lengths differ: {r.shape}, {t.shape}, {e.shape}")
    return r, t, e


def concordance_index(risks, times=None, events=None) -> float:
    """Harrell's C.

    Comparable pairs (i, j): time_i < time_j with event_i observed (tied
    times never compare). A pair scores 1 when risk_i > risk_j, 0.5 on a
    risk tie, else 0; C is the mean over comparable pairs.

    Accepts either a list of RiskOutcome or three parallel arrays.
    """
    r, t, e = _unpack_outcomes(risks, times, events)
    earlier = (t[:, None] < t[None, :]) & e[:, None]
    n_comparable = int(earlier.sum())
    if n_comparable == 0:
        raise UndefinedStatisticError("concordance undefined: no comparable pair")
    concordant = int((earlier & (r[:, None] > r[None, :])).sum())
    tied = int((earlier & (r[:, None] == r[None, :])).sum())
    return (concordant + 0.5 * tied) / n_comparable


def kaplan_meier(times, events) -> KMCurve:
    """Product-limit estimator; censored subjects leave the risk set after
    their recorded time (they still count at their own time)."""
    t = check_finite_array(times, "times", ndim=1)
    e = np.asarray(events, dtype=bool)
    if t.size == 0:
        raise ValidationError("kaplan_meier needs at least one subject")
    event_times = np.unique(t[e])
    at_risk = np.empty(event_times.size)
    n_events = np.empty(event_times.size)
    for i, et in enumerate(event_times):
        at_risk[i] = np.sum(t >= et)
        n_events[i] = np.sum((t == et) & e)
    survival = np.cumprod(1.0 - n_events / at_risk) if event_times.size else np.empty(0)
    return KMCurve(times=event_times, survival=survival,
                   at_risk=at_risk, events=n_events)


def log_rank(group_a, group_b) -> LogRankResult:
    """Two-group log-rank test. Each group is a (times, events) pair.

    At every distinct event time, observed events in group A are compared
    with their hypergeometric expectation; chi2 = (O - E)^2 / V and the
    p-value is the chi-square(1) upper tail.
    """
    ta, ea = (check_finite_array(group_a[0], "group_a times", ndim=1),
              np.asarray(group_a[1], dtype=bool))
    tb, eb = (check_finite_array(group_b[0], "group_b times", ndim=1),
              np.asarray(group_b[1], dtype=bool))
    if ta.size == 0 or tb.size == 0:
        raise UndefinedStatisticError("log-rank needs two non-empty groups")
    times = np.concatenate([ta, tb])
    events = np.concatenate([ea, eb])
    in_a = np.concatenate([np.ones(ta.size, bool), np.zeros(tb.size, bool)])
    event_times = np.unique(times[events])

    observed_minus_expected = 0.0
    variance = 0.0
    for et in event_times:
        at = times >= et
        n = float(at.sum())
        n1 = float((at & in_a).sum())
        here = (times == et) & events
        d = float(here.sum())
        d1 = float((here & in_a).sum())
        observed_minus_expected += d1 - d * n1 / n
        if n > 1.0:
            variance += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0)
    if variance <= 0.0:
        raise UndefinedStatisticError("log-rank undefined: zero variance (no usable events)")
    chi2 = observed_minus_expected ** 2 / variance
    return LogRankResult(chi2=chi2, p_value=chi2_sf(chi2, df=1))


def wilcoxon_signed_rank(pairs) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired scores.

    Zero differences are dropped; tied absolute differences get average
    ranks. W = min(W+, W-); the p-value uses the normal approximation with
    tie-corrected variance and a 0.5 continuity correction. Fewer than 5
    non-zero differences cannot reach significance under this
    approximation, so p = 1 is reported with a warning.
    """
    diffs = np.asarray([float(a) - float(b) for a, b in pairs])
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n_nonzero=0, degenerate=True)
    ranks = _average_ranks(np.abs(diffs))
    w_pos = float(ranks[diffs > 0].sum())
    w_neg = float(ranks[diffs < 0].sum())
    stat = min(w_pos, w_neg)
    if n < 5:
        warnings.warn("wilcoxon_signed_rank: fewer than 5 non-zero differences; "
                      "reporting p=1", UserWarning, stacklevel=2)
        return WilcoxonResult(statistic=stat, p_value=1.0, n_nonzero=n)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, counts = np.unique(np.abs(diffs), return_counts=True)
    var -= float((counts.astype(float) ** 3 - counts).sum()) / 48.0
    if var <= 0.0:
        return WilcoxonResult(statistic=stat, p_value=1.0, n_nonzero=n, degenerate=True)
    z = (stat - mean + 0.5) / math.sqrt(var)
    p = min(1.0, 2.0 * _normal_cdf(z))
    return WilcoxonResult(statistic=stat, p_value=p, n_nonzero=n)


def stratify_by_median(risks) -> tuple[np.ndarray, np.ndarray]:
    """Split indices into (high, low) risk groups at the median; ties with
    the median fall into the low group."""
    r = check_finite_array(risks, "risks", ndim=1)
    if r.size < 2:
        raise ValidationError("median stratification needs at least 2 patients")
    median = float(np.median(r))
    high = np.flatnonzero(r > median)
    low = np.flatnonzero(r <= median)
    return high, low


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


# -- regularized incomplete gamma (for the chi-square tail) ---------------

_GAMMA_EPS = 3e-16
_GAMMA_FPMIN = 1e-300
_GAMMA_ITMAX = 500


def chi2_sf(x: float, df: int = 1) -> float:
    """Upper tail P(chi2_df > x) = Q(df/2, x/2)."""
    if x < 0.0:
        raise ValidationError(f"chi-square statistic must be >= 0, got {x}")
    return regularized_gamma_q(df / 2.0, x / 2.0)


def regularized_gamma_q(a: float, x: float) -> float:
    """Q(a, x) = 1 - P(a, x), by series for x < a + 1 and by continued
    fraction otherwise (Lentz's method)."""
    if a <= 0.0 or x < 0.0:
        raise ValidationError(f"regularized_gamma_q needs a > 0, x >= 0 (got a={a}, x={x})")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_contfrac(a, x)


def _gamma_p_series(a: float, x: float) -> float:
    ap = a
    total = 1.0 / a
    delta = total
    for _ in range(_GAMMA_ITMAX):
        ap += 1.0
        delta *= x / ap
        total += delta
        if abs(delta) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    b = x + 1.0 - a
    c = 1.0 / _GAMMA_FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_ITMAX + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _GAMMA_FPMIN:
            d = _GAMMA_FPMIN
        c = b + an / c
        if abs(c) < _GAMMA_FPMIN:
            c = _GAMMA_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
