"""Rank statistics: AUROC and the Mann-Whitney U test.

AUROC is computed from midranks, which makes it exactly the normalized
Mann-Whitney U statistic (ties count one half). The U test returns a
two-sided p-value: exact via the permutation distribution of the rank sum
when n*m <= 400 (a subset-sum dynamic program over doubled midranks, which
enumerates the full distribution without materializing C(n+m, n) subsets),
otherwise the normal approximation with tie correction and continuity
correction.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import UndefinedMetricError

EXACT_LIMIT = 400  # exact permutation distribution while n*m <= this


def _midranks(values: np.ndarray) -> np.ndarray:
    """Fractional ranks (1-based); tied values share the mean of their ranks."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Area under the ROC curve via midranks; needs both classes present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise UndefinedMetricError(f"scores {scores.shape} and labels {labels.shape} must be matching vectors")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUROC undefined with {n_pos} positives and {n_neg} negatives")
    ranks = _midranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _rank_sum_distribution(ranks2: np.ndarray, n: int) -> np.ndarray:
    """Counts of subsets of size n by doubled-rank sum (exact DP).

    ranks2 are midranks times two (integers). Entry [s] of the result counts
    size-n subsets with doubled rank sum s.
    """
    total = int(ranks2.sum())
    counts = np.zeros((n + 1, total + 1), dtype=np.float64)
    counts[0, 0] = 1.0
    for r in ranks2:
        r = int(r)
        upper = min(n, len(ranks2))
        for k in range(upper - 1, -1, -1):
            row = counts[k]
            nz = np.nonzero(row)[0]
            if len(nz) == 0:
                continue
            counts[k + 1, nz + r] += row[nz]
    return counts[n]


def mann_whitney_u(sample_a, sample_b):
    """Two-sided Mann-Whitney U test; returns (U of sample_a, p-value)."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise UndefinedMetricError("both samples must be nonempty")
    n, m = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    rank_sum_a = float(ranks[:n].sum())
    u = rank_sum_a - n * (n + 1) / 2.0
    if n * m <= EXACT_LIMIT:
        p = _exact_p(ranks, n, m, rank_sum_a)
    else:
        p = _normal_p(pooled, ranks, n, m, u)
    return u, min(1.0, p)


def _exact_p(ranks: np.ndarray, n: int, m: int, rank_sum_a: float) -> float:
    ranks2 = np.rint(ranks * 2.0).astype(np.int64)
    dist = _rank_sum_distribution(ranks2, n)
    total = dist.sum()
    s_obs = int(round(rank_sum_a * 2.0))
    # two-sided: both tails at least as extreme as the observed rank sum,
    # using the symmetry of the permutation distribution about its mean
    mean2 = float(ranks2.sum()) * n / (n + m)
    lo = min(s_obs, int(round(2 * mean2 - s_obs)))
    hi = max(s_obs, int(round(2 * mean2 - s_obs)))
    sums = np.arange(dist.shape[0])
    p = (dist[sums <= lo].sum() + dist[sums >= hi].sum()) / total
    return float(p)


def _normal_p(pooled: np.ndarray, ranks: np.ndarray, n: int, m: int, u: float) -> float:
    big_n = n + m
    mu = n * m / 2.0
    # tie correction from the pooled tie group sizes
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts**3 - counts))
    var = n * m / 12.0 * ((big_n + 1) - tie_term / (big_n * (big_n - 1)))
    if var <= 0:
        return 1.0
    z = (abs(u - mu) - 0.5) / math.sqrt(var)  # continuity-corrected
    z = max(z, 0.0)
    return math.erfc(z / math.sqrt(2.0))
