"""Hypothesis-test kernels and p-value utilities.

These are the building blocks used by every shift detector and by the
benchmark's rank comparison: two-sample Kolmogorov-Smirnov, chi-square
homogeneity, one-sided binomial, Bonferroni aggregation, empirical quantiles,
and the Friedman / Nemenyi rank machinery.

All functions are pure and reentrant. Every returned p-value lies in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc, logsumexp

from . import errors

__all__ = [
    "TestResult",
    "AggregatedTest",
    "ks_two_sample",
    "chi2_homogeneity",
    "binomial_test_greater",
    "bonferroni",
    "empirical_quantile",
    "friedman_test",
    "nemenyi_cd",
    "average_ranks",
    "NEMENYI_Q_05",
]


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n_source: int
    n_target: int


@dataclass(frozen=True)
class AggregatedTest:
    component_p_values: tuple[float, ...]
    k: int
    aggregated_p: float
    method: str = "Bonferroni"


def _kolmogorov_sf(lam: float) -> float:
    """Survival function Q(lam) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lam^2).

    The alternating series is truncated once a term drops below 1e-12. For
    very small arguments the terms decay too slowly to sum; Q is 1 to double
    precision there, so return 1 directly.
    """
    if lam <= 1e-3:
        return 1.0
    total = 0.0
    sign = 1.0
    j = 1
    while True:
        term = math.exp(-2.0 * j * j * lam * lam)
        if term < 1e-12:
            break
        total += sign * term
        sign = -sign
        j += 1
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(x, y) -> TestResult:
    """Two-sample Kolmogorov-Smirnov test with asymptotic p-value.

    The statistic is the sup-norm distance between the two empirical CDFs,
    evaluated at every pooled data point (which handles ties: both one-sided
    suprema are attained at pooled values). The p-value uses the asymptotic
    Kolmogorov distribution with the Stephens small-sample correction factor
    sqrt(n_e) + 0.12 + 0.11/sqrt(n_e).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n, m = x.size, y.size
    if n == 0 or m == 0:
        raise errors.EmptySample("ks_two_sample requires non-empty samples")
    xs = np.sort(x)
    ys = np.sort(y)
    pooled = np.concatenate([xs, ys])
    cdf_x = np.searchsorted(xs, pooled, side="right") / n
    cdf_y = np.searchsorted(ys, pooled, side="right") / m
    d = float(np.max(np.abs(cdf_x - cdf_y)))
    if d <= 0.0:
        return TestResult(0.0, 1.0, n, m)
    ne = n * m / (n + m)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    return TestResult(d, _kolmogorov_sf(lam), n, m)


def _chi2_sf(stat: float, df: int) -> float:
    """Upper tail of the chi-square distribution via the regularized upper
    incomplete gamma function."""
    if df <= 0:
        return 1.0
    return float(min(1.0, max(0.0, gammaincc(df / 2.0, stat / 2.0))))


def chi2_homogeneity(counts_source, counts_target) -> TestResult:
    """Chi-square test of homogeneity on a 2 x k contingency table.

    Categories with zero combined count are dropped before computing the
    statistic; with a single retained category the test is degenerate and
    returns statistic 0, p 1.
    """
    s = np.asarray(counts_source, dtype=np.float64).ravel()
    t = np.asarray(counts_target, dtype=np.float64).ravel()
    if s.size != t.size:
        raise errors.InvalidArgument("count vectors must have equal length")
    if np.any(s < 0) or np.any(t < 0):
        raise errors.InvalidArgument("counts must be non-negative")
    ns, nt = float(s.sum()), float(t.sum())
    if ns < 1 or nt < 1:
        raise errors.EmptySample("both samples need at least one observation")
    keep = (s + t) > 0
    s, t = s[keep], t[keep]
    k_eff = s.size
    if k_eff <= 1:
        return TestResult(0.0, 1.0, int(ns), int(nt))
    col = s + t
    total = ns + nt
    exp_s = ns * col / total
    exp_t = nt * col / total
    stat = float(((s - exp_s) ** 2 / exp_s).sum() + ((t - exp_t) ** 2 / exp_t).sum())
    return TestResult(stat, _chi2_sf(stat, k_eff - 1), int(ns), int(nt))


def binomial_test_greater(successes: int, trials: int, p0: float) -> TestResult:
    """One-sided binomial test, P(X >= successes) for X ~ Binomial(trials, p0).

    The tail is summed exactly in log space, so results are accurate down to
    extreme p-values.
    """
    if trials < 1 or successes < 0 or successes > trials or not (0.0 < p0 < 1.0):
        raise errors.InvalidArgument(
            f"invalid binomial arguments: successes={successes} trials={trials} p0={p0}"
        )
    if successes == 0:
        return TestResult(float(successes), 1.0, trials, trials)
    i = np.arange(successes, trials + 1, dtype=np.float64)
    log_pmf = (
        math.lgamma(trials + 1)
        - np.array([math.lgamma(v + 1) for v in i])
        - np.array([math.lgamma(trials - v + 1) for v in i])
        + i * math.log(p0)
        + (trials - i) * math.log1p(-p0)
    )
    p = float(np.exp(logsumexp(log_pmf)))
    return TestResult(float(successes), min(1.0, max(0.0, p)), trials, trials)


def bonferroni(p_values) -> AggregatedTest:
    """Bonferroni aggregation: min(1, k * min p).

    The decision against a level alpha is equivalent to min p < alpha / k.
    """
    ps = [float(p) for p in np.asarray(p_values, dtype=np.float64).ravel()]
    if not ps:
        raise errors.EmptyInput("bonferroni requires at least one p-value")
    if any(p < 0 or p > 1 or math.isnan(p) for p in ps):
        raise errors.InvalidArgument("p-values must lie in [0, 1]")
    k = len(ps)
    return AggregatedTest(tuple(ps), k, min(1.0, k * min(ps)))


def empirical_quantile(values, q: float) -> float:
    """Lower empirical quantile: the ceil(q*n)-th order statistic.

    With q = 0 this is the minimum. The lower order statistic guarantees the
    empirical exceedance rate on the sample itself is at most q.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise errors.EmptyInput("empirical_quantile requires non-empty values")
    if not (0.0 <= q <= 1.0):
        raise errors.InvalidArgument("q must lie in [0, 1]")
    vals = np.sort(vals)
    # Snap q*n to an integer when within fp error of one, then take ceil.
    pos = q * vals.size
    nearest = round(pos)
    if abs(pos - nearest) < 1e-9:
        pos = nearest
    idx = max(0, math.ceil(pos) - 1)
    return float(vals[min(idx, vals.size - 1)])


def average_ranks(scores, higher_is_better: bool = True):
    """Per-row fractional ranks (rank 1 = best, ties get the average rank).

    Returns (ranks, column_means) where ranks has the same N x k shape as the
    input scores.
    """
    a = np.asarray(scores, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise errors.InvalidShape("scores must be a non-empty N x k matrix")
    key = -a if higher_is_better else a
    n, k = key.shape
    ranks = np.empty((n, k), dtype=np.float64)
    for i in range(n):
        row = key[i]
        order = np.argsort(row, kind="stable")
        pos = np.empty(k, dtype=np.float64)
        pos[order] = np.arange(1, k + 1, dtype=np.float64)
        for v in np.unique(row):
            mask = row == v
            ranks[i, mask] = pos[mask].mean()
    return ranks, ranks.mean(axis=0)


def friedman_test(ranks) -> TestResult:
    """Friedman test over an N x k matrix of per-dataset rankings.

    chi2_F = 12N / (k(k+1)) * [sum_j Rbar_j^2 - k(k+1)^2 / 4], upper-tail
    chi-square with k-1 degrees of freedom.
    """
    r = np.asarray(ranks, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] < 2 or r.shape[1] < 2:
        raise errors.InvalidShape("ranks must be an N x k matrix with N,k >= 2")
    n, k = r.shape
    mean_ranks = r.mean(axis=0)
    stat = 12.0 * n / (k * (k + 1)) * (float((mean_ranks**2).sum()) - k * (k + 1) ** 2 / 4.0)
    stat = max(0.0, stat)
    return TestResult(stat, _chi2_sf(stat, k - 1), n, k)


# Studentized-range-based Nemenyi critical values q_{0.05, k} / sqrt(2)
# for k = 2..10 methods.
NEMENYI_Q_05 = {
    2: 1.960,
    3: 2.343,
    4: 2.569,
    5: 2.728,
    6: 2.850,
    7: 2.949,
    8: 3.031,
    9: 3.102,
    10: 3.164,
}


def nemenyi_cd(k: int, n_datasets: int, alpha: float = 0.05) -> float:
    """Critical distance of the Nemenyi post-hoc test at alpha = 0.05.

    Two detectors differ when their average ranks differ by more than
    CD = q_{0.05,k} * sqrt(k(k+1) / (6N)).
    """
    if alpha != 0.05:
        raise errors.UnsupportedAlpha("only alpha = 0.05 is supported")
    if k not in NEMENYI_Q_05:
        raise errors.UnsupportedK(f"k must be in [2, 10], got {k}")
    if n_datasets < 2:
        raise errors.InvalidArgument("need at least 2 datasets")
    return NEMENYI_Q_05[k] * math.sqrt(k * (k + 1) / (6.0 * n_datasets))
