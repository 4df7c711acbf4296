"""Paired nonparametric testing for test-then-rank aggregation."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm, rankdata

from .errors import TooFewPairs

__all__ = ["wilcoxon_signed_rank", "signed_rank_null_counts", "holm_adjust"]

ALTERNATIVES = ("greater", "less", "two_sided")


def signed_rank_null_counts(doubled_ranks) -> np.ndarray:
    """Number of sign assignments giving each value of 2*W+.

    Ranks are doubled so average ranks for ties (multiples of 0.5) stay integral.
    """
    counts = np.zeros(int(sum(doubled_ranks)) + 1, dtype=np.int64)
    counts[0] = 1
    top = 0
    for r in doubled_ranks:
        r = int(r)
        counts[r:top + r + 1] += counts[: top + 1].copy()
        top += r
    return counts


def wilcoxon_signed_rank(x, y, alternative: str = "two_sided", *, min_pairs: int = 5,
                         exact_max: int = 25) -> float:
    """p-value of the Wilcoxon signed-rank test on ``x - y``.

    Zero differences are dropped and tied absolute differences get average
    ranks. ``greater`` tests whether x tends to exceed y. Up to ``exact_max``
    pairs the null distribution is enumerated exactly (tie-aware); above that
    the normal approximation with tie and continuity corrections is used.
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be paired 1-D sequences")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n < max(min_pairs, 1):
        raise TooFewPairs(f"{n} non-zero differences, need at least {max(min_pairs, 1)}")
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())

    if n <= exact_max:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = signed_rank_null_counts(doubled)
        obs = int(round(2 * w_plus))
        total = float(2**n)
        p_ge = counts[obs:].sum() / total
        p_le = counts[: obs + 1].sum() / total
    else:
        mean = n * (n + 1) / 4.0
        _, t = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float((t**3 - t).sum()) / 48.0
        sd = math.sqrt(var)
        p_ge = float(norm.sf((w_plus - mean - 0.5) / sd))
        p_le = float(norm.cdf((w_plus - mean + 0.5) / sd))

    if alternative == "greater":
        return float(p_ge)
    if alternative == "less":
        return float(p_le)
    return float(min(1.0, 2.0 * min(p_ge, p_le)))


def holm_adjust(pvals) -> np.ndarray:
    """Holm step-down adjusted p-values, in the input order."""
    p = np.asarray(pvals, dtype=float)
    if p.size == 0:
        return p.copy()
    if ((p < 0) | (p > 1)).any() or np.isnan(p).any():
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adj = np.empty(m)
    adj[order] = np.maximum.accumulate(scaled)
    return adj
