import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import friedmanchisquare, studentized_range

from msforecast.errors import ConfigError, DegenerateStatisticError, InsufficientDataError
from msforecast.stats import (Q_ALPHA_05, PairedScores, RankTable, average_ranks, bayesian_signed_rank, friedman,
                              friedman_chi2, friedman_from_average_ranks, nemenyi_cd, oriented_diffs, q_alpha,
                              rope_for, significant_pairs)


def test_average_rank_examples():
    rt = RankTable(["a", "b"], ["d1", "d2"], [[1, 2], [1, 2]])
    assert average_ranks(rt).tolist() == [1.0, 2.0]
    tied = RankTable.from_scores(list("abcd"), ["x", "y", "z"], np.ones((3, 4)))
    assert np.all(average_ranks(tied) == 2.5)
    assert friedman_chi2(average_ranks(tied), 3) == 0.0


def test_dominant_method_has_rank_one():
    rng = np.random.default_rng(0)
    scores = rng.random((10, 4)) + 1
    scores[:, 2] = 0.0
    assert average_ranks(RankTable.from_scores(list("abcd"), list(range(10)), scores))[2] == 1.0
    hib = RankTable.from_scores(list("abcd"), list(range(10)), scores, higher_is_better=True)
    assert average_ranks(hib)[2] == 4.0


def test_rank_table_validation():
    with pytest.raises(ConfigError):
        RankTable(["a", "b"], ["d"], [[1, 1]])
    with pytest.raises(ConfigError):
        RankTable(["a"], ["d"], [[1, 2]])


def test_friedman_two_by_two():
    assert friedman_chi2([1.0, 2.0], 2) == pytest.approx(2.0)
    # chi2 equals N(k-1) here, so the F statistic is undefined
    with pytest.raises(DegenerateStatisticError):
        friedman_from_average_ranks([1.0, 2.0], 2)
    with pytest.raises(InsufficientDataError):
        friedman_chi2([1.0], 5)


def test_friedman_matches_scipy():
    rng = np.random.default_rng(3)
    scores = rng.random((12, 5))
    rt = RankTable.from_scores(list("abcde"), list(range(12)), scores)
    chi2, f_f, dof = friedman(rt)
    ref = friedmanchisquare(*scores.T).statistic
    assert chi2 == pytest.approx(ref, rel=1e-12)
    assert f_f == pytest.approx(11 * chi2 / (12 * 4 - chi2))
    assert dof == (4, 44)


@given(st.integers(0, 10_000), st.permutations(range(5)))
def test_friedman_invariant_to_relabeling(seed, perm):
    scores = np.random.default_rng(seed).random((6, 5))
    a = friedman(RankTable.from_scores(list("abcde"), list(range(6)), scores))
    b = friedman(RankTable.from_scores(list("abcde"), list(range(6)), scores[:, list(perm)]))
    assert a[0] == pytest.approx(b[0], rel=1e-12, abs=1e-12)


def test_nemenyi_examples():
    assert nemenyi_cd(4, 24, 2.569) == pytest.approx(0.957, abs=5e-4)
    assert nemenyi_cd(4, 96, 2.569) == pytest.approx(nemenyi_cd(4, 24, 2.569) / 2)
    cd = nemenyi_cd(4, 24)
    pairs = significant_pairs(["ours", "af"], [1.33, 2.33], cd)
    assert pairs and pairs[0][:2] == ("ours", "af")
    with pytest.raises(ConfigError):
        q_alpha(11)
    with pytest.raises(ConfigError):
        nemenyi_cd(4, 0, 2.5)


def test_nemenyi_random_triples():
    rng = np.random.default_rng(5)
    for _ in range(12):
        k, n, q = int(rng.integers(2, 20)), int(rng.integers(1, 100)), float(rng.uniform(0.5, 4))
        assert nemenyi_cd(k, n, q) == math.sqrt(k * (k + 1) / (6.0 * n)) * q or \
            abs(nemenyi_cd(k, n, q) - q * math.sqrt(k * (k + 1) / (6 * n))) < 1e-15


@pytest.mark.parametrize("k", sorted(Q_ALPHA_05))
def test_q_table_matches_studentized_range(k):
    assert Q_ALPHA_05[k] == pytest.approx(studentized_range.ppf(0.95, k, np.inf) / math.sqrt(2), abs=1.5e-3)


def test_bayesian_identical_scores():
    ps = PairedScores("a", "b", np.zeros(20), 0.5)
    p = bayesian_signed_rank(ps, mc_samples=20_000, rng=np.random.default_rng(0))
    assert p[1] >= 0.99
    assert sum(p) == pytest.approx(1.0, abs=1e-9)


def test_bayesian_dominance_and_antisymmetry():
    ps = PairedScores("a", "b", np.full(24, 5.0), 0.5)
    p = bayesian_signed_rank(ps, mc_samples=20_000, rng=np.random.default_rng(1))
    assert p[0] >= 0.99
    diffs = np.random.default_rng(2).normal(0.2, 1.0, 30)
    fwd = bayesian_signed_rank(PairedScores("a", "b", diffs, 0.3), mc_samples=10_000, rng=np.random.default_rng(7))
    rev = bayesian_signed_rank(PairedScores("b", "a", -diffs, 0.3), mc_samples=10_000, rng=np.random.default_rng(7))
    assert fwd == (rev[2], rev[1], rev[0])


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=15), st.floats(0, 2))
def test_bayesian_probabilities_sum_to_one(diffs, rope):
    p = bayesian_signed_rank(PairedScores("a", "b", diffs, rope), mc_samples=10_000, rng=np.random.default_rng(0))
    assert abs(sum(p) - 1.0) < 1e-9 and min(p) >= 0.0


def test_bayesian_preconditions():
    with pytest.raises(InsufficientDataError):
        bayesian_signed_rank(PairedScores("a", "b", [], 0.5))
    with pytest.raises(ConfigError):
        bayesian_signed_rank(PairedScores("a", "b", [1.0], 0.5), mc_samples=100)
    with pytest.raises(ConfigError):
        PairedScores("a", "b", [np.nan], 0.5)
    with pytest.raises(ConfigError):
        PairedScores("a", "b", [1.0], -1)


def test_rope_and_orientation():
    assert rope_for("ade", "meters") == 0.5
    assert rope_for("min_fde", "pixels") == 1.0
    assert rope_for("kde_nll") == 0.0
    assert rope_for("ecfl", "pixels") == 1.0
    with pytest.raises(ConfigError):
        rope_for("speed")
    # lower ADE for A is a positive difference; higher ECFL for A likewise
    assert oriented_diffs("min_ade", [1.0], [2.0]).tolist() == [1.0]
    assert oriented_diffs("ecfl", [90.0], [80.0]).tolist() == [10.0]
    assert oriented_diffs("ade", [1.0], [2.0]).tolist() == [1.0]
