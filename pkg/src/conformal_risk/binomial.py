"""Binomial lower-tail probabilities summed term by term in log space."""

from __future__ import annotations

import math

import numpy as np

# exact integer binomial coefficients up to this n, lgamma beyond
_EXACT_COMB_MAX_N = 20_000


def _log_comb(n: int, ks: np.ndarray) -> np.ndarray:
    if n <= _EXACT_COMB_MAX_N:
        out = np.empty(ks.size)
        c = 1
        k_prev = 0
        for i, k in enumerate(ks.tolist()):
            while k_prev < k:
                c = c * (n - k_prev) // (k_prev + 1)
                k_prev += 1
            out[i] = math.log(c)
        return out
    lg = np.vectorize(math.lgamma, otypes=[float])
    return lg(n + 1.0) - lg(ks + 1.0) - lg(n - ks + 1.0)


def binom_logcdf(n: int, p: float, m: int) -> float:
    """``log P(X <= m)`` for ``X ~ Binomial(n, p)``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if m < 0:
        return -math.inf
    if m >= n:
        return 0.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return -math.inf
    ks = np.arange(m + 1)
    logpmf = _log_comb(n, ks) + ks * math.log(p) + (n - ks) * math.log1p(-p)
    top = float(np.max(logpmf))
    return top + math.log(math.fsum(np.exp(logpmf - top).tolist()))


def binom_cdf(n: int, p: float, m: int) -> float:
    """``P(X <= m)`` for ``X ~ Binomial(n, p)``."""
    return math.exp(binom_logcdf(n, p, m))
