"""Statistical kernel tests, including independent oracles for p-values."""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftbench import errors, stats


# ---------------------------------------------------------------------------
# Oracles (kept independent of the implementations they check)
# ---------------------------------------------------------------------------

def ks_statistic_oracle(x, y):
    """Sup distance between ECDFs, evaluated at every pooled point."""
    pooled = sorted(list(x) + list(y))
    n, m = len(x), len(y)
    xs, ys = sorted(x), sorted(y)
    best = 0.0
    for v in pooled:
        fx = sum(1 for a in xs if a <= v) / n
        fy = sum(1 for a in ys if a <= v) / m
        best = max(best, abs(fx - fy))
    return best


def ks_permutation_p(x, y):
    """Exact permutation p-value by full enumeration of the pooled splits."""
    pooled = np.concatenate([np.asarray(x, float), np.asarray(y, float)])
    n = len(x)
    total_len = len(pooled)
    d_obs = ks_statistic_oracle(x, y)
    count = 0
    total = 0
    idx_all = set(range(total_len))
    for combo in itertools.combinations(range(total_len), n):
        xs = pooled[list(combo)]
        ys = pooled[list(idx_all - set(combo))]
        if ks_statistic_oracle(xs, ys) >= d_obs - 1e-12:
            count += 1
        total += 1
    return count / total


def chi2_statistic_oracle(cs, ct):
    cs, ct = list(map(float, cs)), list(map(float, ct))
    keep = [i for i in range(len(cs)) if cs[i] + ct[i] > 0]
    cs = [cs[i] for i in keep]
    ct = [ct[i] for i in keep]
    if len(cs) <= 1:
        return 0.0, 0
    ns, nt = sum(cs), sum(ct)
    total = ns + nt
    stat = 0.0
    for s, t in zip(cs, ct):
        col = s + t
        es = ns * col / total
        et = nt * col / total
        stat += (s - es) ** 2 / es + (t - et) ** 2 / et
    return stat, len(cs) - 1


def chi2_mc_p(cs, ct, n_resamples=50_000, seed=0):
    """Monte-Carlo p: multinomial resamples under the pooled proportions."""
    cs = np.asarray(cs, float)
    ct = np.asarray(ct, float)
    stat_obs, _ = chi2_statistic_oracle(cs, ct)
    pooled = (cs + ct) / (cs + ct).sum()
    rng = np.random.default_rng(seed)
    rs = rng.multinomial(int(cs.sum()), pooled, size=n_resamples).astype(float)
    rt = rng.multinomial(int(ct.sum()), pooled, size=n_resamples).astype(float)
    col = rs + rt
    ns, nt = cs.sum(), ct.sum()
    total = ns + nt
    with np.errstate(divide="ignore", invalid="ignore"):
        es = ns * col / total
        et = nt * col / total
        terms = np.where(col > 0, (rs - es) ** 2 / np.where(es > 0, es, 1), 0.0)
        terms += np.where(col > 0, (rt - et) ** 2 / np.where(et > 0, et, 1), 0.0)
    sim = terms.sum(axis=1)
    return float(np.mean(sim >= stat_obs - 1e-12))


def binomial_tail_exact(successes, trials, p0: Fraction) -> Fraction:
    """P(X >= successes) by exact rational big-integer summation."""
    acc = Fraction(0)
    for i in range(successes, trials + 1):
        acc += (
            Fraction(math.comb(trials, i))
            * p0**i
            * (1 - p0) ** (trials - i)
        )
    return acc


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov
# ---------------------------------------------------------------------------

class TestKsTwoSample:
    def test_identical_samples(self):
        r = stats.ks_two_sample([1, 2, 3], [1, 2, 3])
        assert r.statistic == 0.0
        assert r.p_value == 1.0

    def test_disjoint_supports(self):
        r = stats.ks_two_sample([0, 1, 2], [10, 11, 12])
        assert r.statistic == 1.0
        assert r.p_value < 0.2

    def test_empty_sample_rejected(self):
        with pytest.raises(errors.EmptySample):
            stats.ks_two_sample([], [1.0])

    def test_statistic_matches_oracle_with_ties(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.integers(0, 4, size=9).astype(float)
            y = rng.integers(0, 4, size=12).astype(float)
            r = stats.ks_two_sample(x, y)
            assert r.statistic == pytest.approx(ks_statistic_oracle(x, y), abs=1e-12)

    def test_asymptotic_close_to_permutation_oracle(self):
        # Small version of the acceptance criterion: 5 pairs at n = m = 8.
        rng = np.random.default_rng(3)
        for _ in range(5):
            x = rng.normal(size=8)
            y = rng.normal(loc=rng.uniform(0, 1.5), size=8)
            approx = stats.ks_two_sample(x, y).p_value
            exact = ks_permutation_p(x, y)
            assert abs(approx - exact) < 0.05

    def test_null_rejection_rate(self):
        # Under H0 with n = m = 500 the 5% test should reject about 5%.
        rng = np.random.default_rng(42)
        rejections = 0
        trials = 2000
        for _ in range(trials):
            x = rng.normal(size=500)
            y = rng.normal(size=500)
            if stats.ks_two_sample(x, y).p_value < 0.05:
                rejections += 1
        assert 0.03 <= rejections / trials <= 0.07

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=30),
           st.lists(st.floats(-50, 50), min_size=1, max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_symmetry_and_range(self, x, y):
        a = stats.ks_two_sample(x, y)
        b = stats.ks_two_sample(y, x)
        assert a.statistic == b.statistic
        assert a.p_value == b.p_value
        assert 0.0 <= a.p_value <= 1.0 and not math.isnan(a.p_value)

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=25),
           st.lists(st.floats(-20, 20), min_size=2, max_size=25))
    @settings(max_examples=50, deadline=None)
    def test_monotone_transform_invariance(self, x, y):
        before = stats.ks_two_sample(x, y)
        fx = [math.atan(v) * 3 + 7 for v in x]
        fy = [math.atan(v) * 3 + 7 for v in y]
        after = stats.ks_two_sample(fx, fy)
        assert after.statistic == pytest.approx(before.statistic, abs=1e-12)


# ---------------------------------------------------------------------------
# Chi-square homogeneity
# ---------------------------------------------------------------------------

class TestChi2Homogeneity:
    def test_identical_counts(self):
        r = stats.chi2_homogeneity([50, 50], [50, 50])
        assert r.statistic == 0.0
        assert r.p_value == 1.0

    def test_degenerate_single_category(self):
        r = stats.chi2_homogeneity([10, 0], [10, 0])
        assert r.statistic == 0.0
        assert r.p_value == 1.0

    def test_against_monte_carlo_oracle(self):
        r = stats.chi2_homogeneity([30, 10], [10, 30])
        assert abs(r.p_value - chi2_mc_p([30, 10], [10, 30], seed=5)) < 0.02

    def test_swap_invariance(self):
        a = stats.chi2_homogeneity([40, 25, 35], [20, 30, 50])
        b = stats.chi2_homogeneity([20, 30, 50], [40, 25, 35])
        assert a.statistic == pytest.approx(b.statistic)
        assert a.p_value == pytest.approx(b.p_value)

    def test_empty_counts_rejected(self):
        with pytest.raises(errors.EmptySample):
            stats.chi2_homogeneity([0, 0], [1, 2])


# ---------------------------------------------------------------------------
# Binomial test
# ---------------------------------------------------------------------------

class TestBinomialTest:
    def test_single_trial(self):
        assert stats.binomial_test_greater(1, 1, 0.5).p_value == pytest.approx(0.5)

    def test_all_successes(self):
        assert stats.binomial_test_greater(10, 10, 0.5).p_value == pytest.approx(2**-10)

    def test_zero_successes(self):
        assert stats.binomial_test_greater(0, 7, 0.5).p_value == 1.0

    def test_exact_oracle(self):
        exact = float(binomial_tail_exact(65, 100, Fraction(1, 2)))
        assert abs(stats.binomial_test_greater(65, 100, 0.5).p_value - exact) < 1e-12

    def test_invalid_arguments(self):
        with pytest.raises(errors.InvalidArgument):
            stats.binomial_test_greater(5, 4, 0.5)
        with pytest.raises(errors.InvalidArgument):
            stats.binomial_test_greater(1, 4, 1.0)


# ---------------------------------------------------------------------------
# Bonferroni and quantiles
# ---------------------------------------------------------------------------

class TestBonferroni:
    def test_basic(self):
        assert stats.bonferroni([0.01, 0.5]).aggregated_p == pytest.approx(0.02)

    def test_capped(self):
        assert stats.bonferroni([0.8, 0.9]).aggregated_p == 1.0

    def test_single_identity(self):
        assert stats.bonferroni([0.3]).aggregated_p == pytest.approx(0.3)

    def test_empty_rejected(self):
        with pytest.raises(errors.EmptyInput):
            stats.bonferroni([])

    @given(
        st.lists(st.floats(0, 1), min_size=1, max_size=10),
        st.floats(0.001, 1.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_decision_equivalence(self, ps, alpha):
        agg = stats.bonferroni(ps)
        assert (agg.aggregated_p < alpha) == (min(ps) < alpha / len(ps))


class TestEmpiricalQuantile:
    def test_uniform_grid(self):
        vals = [i / 100 for i in range(1, 101)]
        assert stats.empirical_quantile(vals, 0.05) == pytest.approx(0.05)

    def test_all_ones(self):
        assert stats.empirical_quantile([1.0] * 10, 0.3) == 1.0

    def test_zero_quantile_is_minimum(self):
        assert stats.empirical_quantile([0.4, 0.1, 0.9], 0.0) == pytest.approx(0.1)

    def test_empty_rejected(self):
        with pytest.raises(errors.EmptyInput):
            stats.empirical_quantile([], 0.5)


# ---------------------------------------------------------------------------
# Friedman / Nemenyi / ranks
# ---------------------------------------------------------------------------

def friedman_statistic_oracle(ranks):
    """Direct re-evaluation of the rank-variance formula."""
    ranks = np.asarray(ranks, float)
    n, k = ranks.shape
    mean_ranks = ranks.mean(axis=0)
    return 12.0 * n / (k * (k + 1)) * (sum(r * r for r in mean_ranks) - k * (k + 1) ** 2 / 4)


class TestFriedman:
    def test_identical_permutations_maximal(self):
        ranks = np.tile(np.arange(1.0, 7.0), (21, 1))
        r = stats.friedman_test(ranks)
        assert r.statistic == pytest.approx(friedman_statistic_oracle(ranks), abs=1e-9)
        assert r.p_value < 1e-10

    def test_full_ties(self):
        ranks = np.full((10, 4), 2.5)
        r = stats.friedman_test(ranks)
        assert r.statistic == 0.0
        assert r.p_value == 1.0

    def test_fixture_matches_hand_formula(self):
        rng = np.random.default_rng(11)
        scores = rng.normal(size=(10, 3))
        ranks, _ = stats.average_ranks(scores)
        r = stats.friedman_test(ranks)
        assert r.statistic == pytest.approx(friedman_statistic_oracle(ranks), abs=1e-9)

    def test_bad_shape(self):
        with pytest.raises(errors.InvalidShape):
            stats.friedman_test(np.ones((1, 5)))


class TestNemenyi:
    def test_k2_closed_form(self):
        for n in (5, 21, 100):
            assert stats.nemenyi_cd(2, n) == pytest.approx(1.960 / math.sqrt(n))

    def test_k6_n21(self):
        assert stats.nemenyi_cd(6, 21) == pytest.approx(2.850 * math.sqrt(42 / 126), abs=1e-12)

    def test_monotone_in_n(self):
        cds = [stats.nemenyi_cd(4, n) for n in (5, 10, 50, 500)]
        assert all(a > b for a, b in zip(cds, cds[1:]))

    def test_unsupported(self):
        with pytest.raises(errors.UnsupportedK):
            stats.nemenyi_cd(11, 10)
        with pytest.raises(errors.UnsupportedAlpha):
            stats.nemenyi_cd(4, 10, alpha=0.01)


class TestAverageRanks:
    def test_tie_rule(self):
        ranks, means = stats.average_ranks(np.array([[5.0, 3.0, 3.0, 0.0]]))
        assert ranks[0].tolist() == [1.0, 2.5, 2.5, 4.0]
        assert means.tolist() == [1.0, 2.5, 2.5, 4.0]

    def test_all_equal(self):
        ranks, _ = stats.average_ranks(np.array([[2.0, 2.0, 2.0]]))
        assert ranks[0].tolist() == [2.0, 2.0, 2.0]

    def test_lower_is_better(self):
        ranks, _ = stats.average_ranks(np.array([[1.0, 5.0]]), higher_is_better=False)
        assert ranks[0].tolist() == [1.0, 2.0]

    def test_rank_invariance_under_monotone_transform(self):
        rng = np.random.default_rng(3)
        scores = rng.normal(size=(6, 5))
        r1, _ = stats.average_ranks(scores)
        r2, _ = stats.average_ranks(np.exp(scores) * 3 + 1)
        assert np.array_equal(r1, r2)
