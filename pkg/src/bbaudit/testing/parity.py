"""Two-proportion tests of ``|p_1 - p_2|`` against a parity threshold.

Presumption of compliance (null ``|p_1 - p_2| <= eta``) is tested at the
least-favorable boundary ``|p_1 - p_2| = eta``, taking the larger of the two
signed boundary cases. Presumption of non-compliance (null
``|p_1 - p_2| > eta``) is tested by two one-sided tests (TOST), whose p-value
is the larger of the two one-sided p-values.

Both presumptions are available through a normal approximation
(:func:`boundary_z_test`) and exact binomial enumeration
(:func:`exact_binomial_boundary_test`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special, stats

from ..errors import MethodNotApplicable

Z_GUARD = 30
ENUMERATION_BOUND = 10**6
NUISANCE_GRID = 200
REFINE_PEAKS = 3
REFINE_ROUNDS = 7
REFINE_POINTS = 21
# floats per refinement batch; bounds memory for large tables
REFINE_WORK = 4_000_000
# a whole p-value table is built when (distinct statistic values) x (outcome cells) stays below this
TABLE_WORK = 2_000_000


class Presumption(str, enum.Enum):
    COMPLIANCE = "Compliance"
    NON_COMPLIANCE = "NonCompliance"

    @property
    def null(self) -> str:
        return "g(f) <= 0" if self is Presumption.COMPLIANCE else "g(f) > 0"

    @property
    def default_conclusion(self) -> str:
        return "compliant" if self is Presumption.COMPLIANCE else "non-compliant"


class Decision(str, enum.Enum):
    REJECT_NULL = "RejectNull"
    FAIL_TO_REJECT = "FailToReject"


@dataclass(frozen=True)
class TestResult:
    p_value: float
    decision: Decision

    __test__ = False  # not a pytest class


def decide(p_value: float, zeta: float) -> Decision:
    # ties at the significance level reject
    return Decision.REJECT_NULL if p_value <= zeta else Decision.FAIL_TO_REJECT


def _check_counts(k1: int, n1: int, k2: int, n2: int, eta: float, zeta: float) -> None:
    if n1 < 1 or n2 < 1:
        raise ValueError("each group needs at least one observation")
    if not (0 <= k1 <= n1 and 0 <= k2 <= n2):
        raise ValueError(f"counts out of range: {k1}/{n1}, {k2}/{n2}")
    if not 0 <= eta < 1:
        raise ValueError("eta must lie in [0, 1)")
    if not 0 < zeta < 1:
        raise ValueError("significance must lie in (0, 1)")


def constrained_rates(k1, n1, k2, n2, delta: float):
    """Maximum-likelihood rates ``(q1, q2)`` subject to ``q1 - q2 = delta``.

    Vectorized over the count arguments. The log-likelihood is concave in
    ``q2``, so bisection on its derivative converges to the unique maximizer.
    """
    k1, n1, k2, n2 = (np.asarray(v, dtype=float) for v in (k1, n1, k2, n2))
    lo = np.full(np.broadcast(k1, n1, k2, n2).shape, max(0.0, -delta))
    hi = np.full_like(lo, min(1.0, 1.0 - delta))

    def slope(q2):
        q1 = q2 + delta
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = (
                np.where(k1 > 0, k1 / q1, 0.0) - np.where(n1 - k1 > 0, (n1 - k1) / (1 - q1), 0.0)
                + np.where(k2 > 0, k2 / q2, 0.0) - np.where(n2 - k2 > 0, (n2 - k2) / (1 - q2), 0.0)
            )
        return terms

    for _ in range(80):
        mid = 0.5 * (lo + hi)
        up = slope(mid) > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    q2 = 0.5 * (lo + hi)
    return q2 + delta, q2


def _boundary_se(k1, n1, k2, n2, delta):
    q1, q2 = constrained_rates(k1, n1, k2, n2, delta)
    return np.sqrt(q1 * (1 - q1) / n1 + q2 * (1 - q2) / n2)


def _continuity(n1, n2):
    # half the lattice spacing of the difference in rates
    return 0.5 * (1.0 / n1 + 1.0 / n2)


def boundary_z_pvalues(k1, n1, k2, n2, eta: float, presumption: Presumption) -> np.ndarray:
    """Vectorized normal-approximation p-values (no sample-size guard)."""
    k1, n1, k2, n2 = (np.asarray(v, dtype=float) for v in (k1, n1, k2, n2))
    d = k1 / n1 - k2 / n2
    c = _continuity(n1, n2)
    se_up = _boundary_se(k1, n1, k2, n2, eta)
    se_dn = _boundary_se(k1, n1, k2, n2, -eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        if presumption is Presumption.COMPLIANCE:
            a = np.maximum(np.abs(d) - c, 0.0)
            ps = []
            for shift, se in ((eta, se_up), (-eta, se_dn)):
                p = stats.norm.sf((a - shift) / se) + stats.norm.cdf((-a - shift) / se)
                # degenerate null distribution: D is the point ``shift``
                p = np.where(se > 0, p, (np.abs(shift) >= a - 1e-12).astype(float))
                ps.append(p)
            out = np.maximum(ps[0], ps[1])
        else:
            p_hi = np.where(se_up > 0, stats.norm.cdf((d + c - eta) / se_up), (d <= eta).astype(float))
            p_lo = np.where(se_dn > 0, stats.norm.sf((d - c + eta) / se_dn), (d >= -eta).astype(float))
            out = np.maximum(p_hi, p_lo)
    return np.clip(out, 0.0, 1.0)


def boundary_z_test(k1: int, n1: int, k2: int, n2: int, eta: float, zeta: float,
                    presumption: Presumption, *, enforce_guard: bool = True) -> TestResult:
    """Normal-approximation test of the parity gap against ``eta``.

    Standard errors use the maximum-likelihood rates constrained to the
    boundary being tested, and the observed gap is moved half a lattice step
    (``(1/n1 + 1/n2) / 2``) toward the null before standardising. Both groups need at least 30 observations unless
    ``enforce_guard`` is off (used only for cross-checks against the exact test).
    """
    presumption = Presumption(presumption)
    _check_counts(k1, n1, k2, n2, eta, zeta)
    if enforce_guard and min(n1, n2) < Z_GUARD:
        raise MethodNotApplicable(
            f"normal approximation needs n >= {Z_GUARD} per group (got {n1}, {n2}); "
            "use the exact binomial boundary test"
        )
    p = float(boundary_z_pvalues(k1, n1, k2, n2, eta, presumption))
    return TestResult(p, decide(p, zeta))


@lru_cache(maxsize=64)
def _log_choose(n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(n + 1, dtype=float)
    return k, special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


def _pmf_rows(n: int, p: np.ndarray) -> np.ndarray:
    k, logc = _log_choose(n)
    p = np.clip(p, 0.0, 1.0)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        # masking the k = 0 and k = n terms keeps p in {0, 1} exact point masses
        log_pk = np.where(k > 0, k * np.log(p), 0.0)
        log_qk = np.where(k < n, (n - k) * np.log1p(-p), 0.0)
    return np.exp(logc + log_pk + log_qk)


@lru_cache(maxsize=256)
def _statistic(n1: int, n2: int, absolute: bool) -> tuple[np.ndarray, np.ndarray]:
    """Integer statistic per outcome cell and its sorted distinct values."""
    # n1 * n2 * (k1/n1 - k2/n2) as exact integers
    diff = np.arange(n1 + 1)[:, None] * n2 - np.arange(n2 + 1)[None, :] * n1
    if absolute:
        diff = np.abs(diff)
    return diff, np.unique(diff)


def _tail(n1: int, n2: int, delta: float, p2: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """``P_{p2 + delta, p2}((K1, K2) in masks[j])``; ``p2`` is ``(g,)`` or ``(J, g)``, result ``(J, g)``."""
    return ((_pmf_rows(n1, p2 + delta) @ masks) * _pmf_rows(n2, p2)).sum(axis=-1)


def _sup_tail(n1: int, n2: int, delta: float, masks: np.ndarray) -> np.ndarray:
    """``sup_{p2} P_{p2 + delta, p2}(mask)`` along a boundary line, one value per mask.

    A grid locates the best local maxima; each is then refined by repeatedly
    re-gridding a window ten times narrower around it.
    """
    lo, hi = max(0.0, -delta), min(1.0, 1.0 - delta)
    grid = np.linspace(lo, hi, NUISANCE_GRID + 1)
    vals = _tail(n1, n2, delta, grid, masks)
    best = vals.max(axis=1)
    if hi <= lo:
        return np.minimum(best, 1.0)
    pad = np.full((len(masks), 1), -np.inf)
    peak = (vals >= np.hstack([pad, vals[:, :-1]])) & (vals >= np.hstack([vals[:, 1:], pad]))
    ranked = np.argsort(-np.where(peak, vals, -np.inf), axis=1, kind="stable")[:, :REFINE_PEAKS]
    centers = grid[ranked]
    offsets = np.linspace(-1.0, 1.0, REFINE_POINTS)
    half = (hi - lo) / NUISANCE_GRID
    for _ in range(REFINE_ROUNDS):
        pts = np.clip(centers[:, :, None] + half * offsets, lo, hi)
        v = _tail(n1, n2, delta, pts.reshape(len(masks), -1), masks).reshape(pts.shape)
        best = np.maximum(best, v.max(axis=(1, 2)))
        centers = np.take_along_axis(pts, v.argmax(axis=2)[:, :, None], axis=2)[:, :, 0]
        half /= 10.0
    return np.minimum(best, 1.0)


def _pvalues(n1: int, n2: int, eta: float, presumption: Presumption, obs: np.ndarray) -> np.ndarray:
    compliance = presumption is Presumption.COMPLIANCE
    diff, _ = _statistic(n1, n2, compliance)
    out = np.empty(len(obs))
    cells = (n1 + 1) * (n2 + 1)
    chunk = max(1, REFINE_WORK // (cells * REFINE_PEAKS * REFINE_POINTS))
    for c0 in range(0, len(obs), chunk):
        t = obs[c0:c0 + chunk, None, None]
        if compliance:
            m = (diff >= t).astype(float)
            p = np.maximum(_sup_tail(n1, n2, eta, m), _sup_tail(n1, n2, -eta, m))
        else:
            # TOST: largest of the two one-sided p-values
            p = np.maximum(_sup_tail(n1, n2, eta, (diff <= t).astype(float)),
                           _sup_tail(n1, n2, -eta, (diff >= t).astype(float)))
        out[c0:c0 + chunk] = p
    return out


@lru_cache(maxsize=4096)
def _pvalue_table(n1: int, n2: int, eta: float, presumption: Presumption) -> dict[int, float]:
    """Exact p-values for every attainable value of the statistic."""
    _, levels = _statistic(n1, n2, presumption is Presumption.COMPLIANCE)
    return dict(zip(levels.tolist(), _pvalues(n1, n2, eta, presumption, levels).tolist()))


@lru_cache(maxsize=200_000)
def _pvalue(obs: int, n1: int, n2: int, eta: float, presumption: Presumption) -> float:
    _, levels = _statistic(n1, n2, presumption is Presumption.COMPLIANCE)
    if len(levels) * (n1 + 1) * (n2 + 1) <= TABLE_WORK:
        return _pvalue_table(n1, n2, eta, presumption)[obs]
    return float(_pvalues(n1, n2, eta, presumption, np.array([obs]))[0])


def exact_binomial_boundary_test(k1: int, n1: int, k2: int, n2: int, eta: float, zeta: float,
                                 presumption: Presumption) -> TestResult:
    """Exact unconditional test by enumerating all joint binomial outcomes.

    Compliance: the statistic is ``|k1/n1 - k2/n2|`` and the p-value is the
    largest tail probability over both signed boundaries and every nuisance
    rate along them. Non-compliance: TOST with the same supremum on each side.
    The nuisance supremum is a 201-point grid refined by successive
    tenfold zooms around the three best grid maxima.
    """
    presumption = Presumption(presumption)
    _check_counts(k1, n1, k2, n2, eta, zeta)
    if n1 * n2 > ENUMERATION_BOUND:
        raise MethodNotApplicable(
            f"exact enumeration is limited to n1*n2 <= {ENUMERATION_BOUND} (got {n1 * n2}); use the z-test"
        )
    obs = int(k1) * int(n2) - int(k2) * int(n1)
    if presumption is Presumption.COMPLIANCE:
        obs = abs(obs)
    p = _pvalue(obs, int(n1), int(n2), float(eta), presumption)
    return TestResult(p, decide(p, zeta))


def wald_interval(k1: int, n1: int, k2: int, n2: int, zeta: float) -> tuple[float, float]:
    """Two-sided ``1 - zeta`` Wald interval for ``p_1 - p_2``."""
    r1, r2 = k1 / n1, k2 / n2
    se = math.sqrt(r1 * (1 - r1) / n1 + r2 * (1 - r2) / n2)
    z = stats.norm.ppf(1 - zeta / 2)
    return r1 - r2 - z * se, r1 - r2 + z * se


# -- analytic operating characteristics ------------------------------------------------


def boundary_z_power(p1: float, p2: float, n1: int, n2: int, eta: float, zeta: float,
                     presumption: Presumption = Presumption.COMPLIANCE) -> float:
    """Normal-approximation rejection probability of :func:`boundary_z_test`.

    Null standard errors are evaluated at the expected counts ``n * p``; the
    observed difference is treated as ``N(p1 - p2, s^2)`` with ``s`` the true
    two-proportion standard error.
    """
    presumption = Presumption(presumption)
    delta = p1 - p2
    s = math.sqrt(p1 * (1 - p1) / n1 + p2 * (1 - p2) / n2)
    e1, e2 = n1 * p1, n2 * p2
    se_up = float(_boundary_se(e1, n1, e2, n2, eta))
    se_dn = float(_boundary_se(e1, n1, e2, n2, -eta))
    z = stats.norm.ppf(1 - zeta)
    cc = _continuity(n1, n2)
    if s == 0:
        s = 1e-300
    if presumption is Presumption.COMPLIANCE:
        def pval(c: float) -> float:
            return max(stats.norm.sf((c - eta) / se_up) + stats.norm.cdf((-c - eta) / se_up),
                       stats.norm.sf((c + eta) / se_dn) + stats.norm.cdf((-c + eta) / se_dn))
        if pval(1.0) > zeta:
            return 0.0
        c = optimize.brentq(lambda c: pval(c) - zeta, 0.0, 1.0, xtol=1e-12) + cc
        return float(stats.norm.sf((c - delta) / s) + stats.norm.cdf((-c - delta) / s))
    upper = eta - z * se_up - cc
    lower = -eta + z * se_dn + cc
    if upper <= lower:
        return 0.0
    return float(max(stats.norm.cdf((upper - delta) / s) - stats.norm.cdf((lower - delta) / s), 0.0))


def required_sample_size(eta: float, gap: float, zeta: float, target_tpr: float,
                         presumption: Presumption = Presumption.COMPLIANCE, base_rate: float = 0.5,
                         n_min: int = 2, n_max: int = 10**7) -> int:
    """Smallest per-group n whose analytic power reaches ``target_tpr``.

    ``gap`` is the conjectured true ``|p_1 - p_2|``; the two rates are placed
    symmetrically around ``base_rate``. Under presumption of compliance the
    gap must exceed ``eta`` (otherwise the alternative is false and no n
    helps); under non-compliance it must be below ``eta``.
    """
    presumption = Presumption(presumption)
    if not 0 < zeta < 1 or not 0 < target_tpr < 1:
        raise ValueError("zeta and target_tpr must lie in (0, 1)")
    if target_tpr < zeta:
        raise ValueError("target TPR below the significance level is not a meaningful goal")
    if presumption is Presumption.COMPLIANCE and not gap > eta:
        raise ValueError(
            f"conjectured gap {gap} does not exceed eta={eta}: the model would be compliant, so no "
            "finite sample can make rejecting compliance likely"
        )
    if presumption is Presumption.NON_COMPLIANCE and not abs(gap) < eta:
        raise ValueError(
            f"conjectured gap {gap} is not below eta={eta}: the model would be non-compliant, so no "
            "finite sample can make rejecting non-compliance likely"
        )
    p1, p2 = base_rate + gap / 2, base_rate - gap / 2
    if not (0 <= p2 <= p1 <= 1):
        raise ValueError(f"base_rate {base_rate} with gap {gap} gives rates outside [0, 1]")
    if target_tpr <= zeta:
        # any alternative is rejected at least as often as the boundary null
        return n_min

    def power(n: int) -> float:
        return boundary_z_power(p1, p2, n, n, eta, zeta, presumption)

    if power(n_min) >= target_tpr:
        return n_min
    if power(n_max) < target_tpr:
        raise ValueError(f"target TPR {target_tpr} not reached with n <= {n_max}")
    lo, hi = n_min, n_max
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if power(mid) >= target_tpr:
            hi = mid
        else:
            lo = mid
    return hi
