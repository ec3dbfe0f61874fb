"""Multi-method significance analysis over metric tables."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DegenerateStatisticError, InsufficientDataError

# Nemenyi two-tailed critical values at alpha = 0.05 (studentized range / sqrt 2)
Q_ALPHA_05 = {2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850, 7: 2.949, 8: 3.031, 9: 3.102, 10: 3.164}

ROPE_METERS = 0.5
ROPE_PIXELS = 1.0
ROPE_NLL = 0.0
ROPE_ECFL = 1.0
PRIOR_STRENGTH = 0.5
HIGHER_IS_BETTER = {"min_ade": False, "min_fde": False, "kde_nll": False, "ecfl": True}


@dataclass
class RankTable:
    methods: list[str]
    datasets: list[str]
    ranks: np.ndarray

    def __post_init__(self):
        self.ranks = np.asarray(self.ranks, dtype=np.float64)
        n, k = self.ranks.shape
        if k != len(self.methods) or n != len(self.datasets):
            raise ConfigError("rank matrix shape disagrees with labels")
        if not np.allclose(self.ranks.sum(axis=1), k * (k + 1) / 2.0):
            raise ConfigError("each row must be a (mid)rank permutation of 1..k")

    @classmethod
    def from_scores(cls, methods, datasets, scores, higher_is_better=False) -> "RankTable":
        """Midrank each dataset row; rank 1 is best."""
        scores = np.asarray(scores, dtype=np.float64)
        hib = np.asarray(higher_is_better, dtype=bool)
        signed = np.where(hib[:, None] if hib.ndim else hib, -scores, scores)
        return cls(list(methods), list(datasets), rankdata(signed, axis=1))


@dataclass
class PairedScores:
    method_a: str
    method_b: str
    diffs: np.ndarray
    rope: float

    def __post_init__(self):
        self.diffs = np.asarray(self.diffs, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.diffs)):
            raise ConfigError("paired differences must be finite")
        if self.rope < 0:
            raise ConfigError("rope must be non-negative")


def average_ranks(rt: RankTable) -> np.ndarray:
    return rt.ranks.mean(axis=0)


def friedman_chi2(avg_ranks, n: int) -> float:
    r = np.asarray(avg_ranks, dtype=np.float64)
    k = r.size
    if n < 2 or k < 2:
        raise InsufficientDataError("need N >= 2 datasets and k >= 2 methods")
    return 12.0 * n / (k * (k + 1)) * (float(np.sum(r ** 2)) - k * (k + 1) ** 2 / 4.0)


def friedman_from_average_ranks(avg_ranks, n: int) -> tuple[float, float, tuple[int, int]]:
    """Friedman chi-square and the Iman-Davenport F statistic with its degrees of freedom."""
    chi2 = friedman_chi2(avg_ranks, n)
    k = np.asarray(avg_ranks).size
    denom = n * (k - 1) - chi2
    if abs(denom) < 1e-12:
        raise DegenerateStatisticError("chi2_F equals N(k-1); F_F undefined")
    f_f = (n - 1) * chi2 / denom
    return chi2, f_f, (k - 1, (k - 1) * (n - 1))


def friedman(rt: RankTable) -> tuple[float, float, tuple[int, int]]:
    return friedman_from_average_ranks(average_ranks(rt), rt.ranks.shape[0])


def q_alpha(k: int) -> float:
    try:
        return Q_ALPHA_05[k]
    except KeyError:
        raise ConfigError(f"no Nemenyi critical value tabulated for k={k}") from None


def nemenyi_cd(k: int, n: int, q: float | None = None) -> float:
    """Critical difference ``q * sqrt(k (k + 1) / (6 N))``."""
    q = q_alpha(k) if q is None else q
    if k < 2 or n < 1 or q <= 0:
        raise ConfigError("need k >= 2, N >= 1, q > 0")
    return q * math.sqrt(k * (k + 1) / (6.0 * n))


def significant_pairs(methods, avg_ranks, cd: float) -> list[tuple[str, str, float]]:
    """Pairs whose average-rank gap exceeds the critical difference."""
    out = []
    for i, j in combinations(range(len(methods)), 2):
        gap = abs(avg_ranks[i] - avg_ranks[j])
        if gap > cd:
            out.append((methods[i], methods[j], float(gap)))
    return out


def bayesian_signed_rank(ps: PairedScores, prior_strength: float = PRIOR_STRENGTH,
                         mc_samples: int = 50_000, rng: np.random.Generator | None = None,
                         chunk: int = 5_000) -> tuple[float, float, float]:
    """Posterior probabilities that A wins, the two are practically equivalent, or B wins.

    Positive differences favour A. A Dirichlet process with a pseudo-observation
    at zero of weight ``prior_strength`` is sampled; each draw evaluates the
    weighted Walsh-average mass left of, inside, and right of the ROPE and
    votes for the largest (ties split evenly).
    """
    if ps.diffs.size == 0:
        raise InsufficientDataError("no paired observations")
    if mc_samples < 10_000:
        raise ConfigError("mc_samples must be >= 1e4")
    rng = np.random.default_rng() if rng is None else rng
    z = np.concatenate([[0.0], ps.diffs])
    pair = z[:, None] + z[None, :]
    two_r = 2.0 * ps.rope
    masks = [m.astype(np.float64) for m in ((pair < -two_r), (np.abs(pair) <= two_r), (pair > two_r))]
    alpha = np.concatenate([[prior_strength], np.ones(ps.diffs.size)])
    votes = np.zeros(3)
    done = 0
    while done < mc_samples:
        m = min(chunk, mc_samples - done)
        w = rng.dirichlet(alpha, size=m)
        theta = np.stack([((w @ mk) * w).sum(axis=1) for mk in masks], axis=1)
        # order: [b wins (left), rope, a wins (right)]
        best = theta == theta.max(axis=1, keepdims=True)
        votes += (best / best.sum(axis=1, keepdims=True)).sum(axis=0)
        done += m
    p_b, p_rope, p_a = votes / mc_samples
    return float(p_a), float(p_rope), float(p_b)


def rope_for(metric: str, units: str = "meters") -> float:
    metric = metric.lower().replace("min_", "")
    if metric in ("ade", "fde"):
        if units == "meters":
            return ROPE_METERS
        if units == "pixels":
            return ROPE_PIXELS
        raise ConfigError(f"unknown units {units!r}")
    if metric in ("kde_nll", "nll"):
        return ROPE_NLL
    if metric == "ecfl":
        return ROPE_ECFL
    raise ConfigError(f"no ROPE defined for metric {metric!r}")


def oriented_diffs(metric: str, a, b) -> np.ndarray:
    """Differences oriented so that positive favours method A."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    key = metric if metric.startswith("min_") or metric in HIGHER_IS_BETTER else f"min_{metric}"
    return a - b if HIGHER_IS_BETTER.get(key, False) else b - a
