"""Exact binomial tail probabilities and one-sided upper confidence bounds.

No incomplete-beta routine is used: the CDF is a direct log-space summation
of binomial terms, and the upper confidence bound inverts it by bisection.
Keeping both ends elementary makes the arithmetic auditable and portable.
"""

from __future__ import annotations

import math

import numpy as np

# Bisection stops when the bracket width drops below this. Small enough that
# a validity test at any realistic significance level is unambiguous.
CP_TOL = 1e-9


def _validate_kn(k: int, n: int) -> None:
    if not isinstance(k, (int, np.integer)) or not isinstance(n, (int, np.integer)):
        raise ValueError(f"k and n must be integers, got {k!r}, {n!r}")
    if n < 0 or not (0 <= k <= n):
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")


def binom_cdf_many(n: int, p: float, ks: np.ndarray) -> np.ndarray:
    """P(X <= k) for X ~ Binomial(n, p), for an array of k values.

    One pass: log terms via the pmf ratio recurrence, prefix sums with
    logaddexp, exponentiate, clip to [0, 1].
    """
    ks = np.asarray(ks, dtype=np.int64)
    if ks.size == 0:
        return np.zeros(0)
    if ks.min() < 0 or ks.max() > n:
        raise ValueError(f"need 0 <= k <= n={n}, got range [{ks.min()}, {ks.max()}]")
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"p must be in [0, 1], got {p}")
    out = np.empty(ks.shape, dtype=np.float64)
    if p == 0.0:
        out[:] = 1.0
        return out
    if p == 1.0:
        return np.where(ks == n, 1.0, 0.0).astype(np.float64)
    kmax = int(ks.max())
    log_p = math.log(p)
    log_1p = math.log1p(-p)
    # log pmf(0) = n log(1-p); pmf(i)/pmf(i-1) = (n-i+1)/i * p/(1-p)
    if kmax == 0:
        log_pmf = np.array([n * log_1p])
    else:
        i = np.arange(1, kmax + 1, dtype=np.float64)
        increments = np.log((n - i + 1.0) / i) + (log_p - log_1p)
        log_pmf = np.concatenate(([n * log_1p], n * log_1p + np.cumsum(increments)))
    log_cdf = np.logaddexp.accumulate(log_pmf)
    out = np.exp(log_cdf[ks])
    np.clip(out, 0.0, 1.0, out=out)
    # The full sum over all n terms is exactly 1; force it where k == n.
    out[ks == n] = 1.0
    return out


def binom_cdf(k: int, n: int, p: float) -> float:
    """P(X <= k) for X ~ Binomial(n, p)."""
    _validate_kn(k, n)
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"p must be in [0, 1], got {p}")
    if k == n:
        return 1.0
    return float(binom_cdf_many(n, p, np.array([k]))[0])


def cp_upper(k: int, n: int, delta: float) -> float:
    """One-sided upper confidence bound for a binomial proportion.

    Returns the smallest p with P(X <= k | n, p) <= delta, found by
    bisection to absolute tolerance ``CP_TOL``.  The CDF is strictly
    decreasing in p for k < n, so the bracket [cdf > delta, cdf <= delta]
    is maintained exactly.  For k == n the CDF is 1 for every p and no p
    qualifies; the bound is 1 by convention.
    """
    _validate_kn(k, n)
    if n == 0:
        raise ValueError("n must be at least 1")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if k == n:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > CP_TOL:
        mid = 0.5 * (lo + hi)
        if binom_cdf(k, n, mid) <= delta:
            hi = mid
        else:
            lo = mid
    return hi
