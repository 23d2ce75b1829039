"""Inference of the column repetition pattern.

Three detectors are provided:

* replica detection merges consecutive observed columns whose Hamming
  distance is small (no seeds needed);
* seeded deletion detection compares each reference seed column with the
  observed seed columns after a symbol remapping ``sigma``;
* histogram detection matches column histograms of the two databases and
  needs no seeds, but only works without noise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .bounds import kl_bernoulli
from .errors import Degenerate, DuplicateHistograms, IndependentDatabases, NoSeeds
from .source import NoiseChannel, RaggedDatabase, SeedPair, SourceSpec

MAX_SIGMA_ALPHABET = 10
THRESHOLD_RULES = ("midpoint", "balanced")


@dataclass(frozen=True)
class DetectionConstants:
    p0: float
    p1: float
    tau: float
    sigma: tuple[int, ...]
    q0_prime: float
    q1_prime: float
    q0_min: float
    tau_bar: float

    def to_dict(self) -> dict:
        return {
            "p0": self.p0,
            "p1": self.p1,
            "tau": self.tau,
            "sigma": [s + 1 for s in self.sigma],
            "q0": self.q0_min,
            "q1": self.q1_prime,
            "tau_bar": self.tau_bar,
        }


@dataclass(frozen=True)
class RunStructure:
    run_lengths: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.run_lengths)

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.run_lengths[:-1], dtype=np.int64)]).astype(np.int64) if self.run_lengths else np.zeros(0, np.int64)


@dataclass(frozen=True)
class RepetitionEstimate:
    s_hat: np.ndarray


# -- replica detection ----------------------------------------------------

def replica_probs(spec: SourceSpec, noise: NoiseChannel) -> tuple[float, float]:
    """``(p0, p1)``: probability two observed columns differ at a row when
    they come from different (adjacent) columns and from the same column."""
    u = spec.pi
    w = noise.matrix
    p1 = float(np.sum(u[:, None] * w * (1 - w)))
    # p0' = sum_{i,j,k} u_i u_j p(k|i) (1 - p(k|j))
    mix = u @ w  # p_Y(k)
    p0p = float(np.sum(mix * (1 - mix)))
    p0 = (1 - spec.gamma) * p0p + spec.gamma * p1
    return p0, p1


def _balanced_point(lo: float, hi: float) -> float:
    """Point where ``D(t||lo) = D(t||hi)``; midpoint when an endpoint is 0 or 1."""
    if lo <= 0.0 or hi >= 1.0:
        return (lo + hi) / 2
    a = math.log2(hi / lo)
    b = math.log2((1 - lo) / (1 - hi))
    return b / (a + b)


def _threshold(lo: float, hi: float, rule: str) -> float:
    if rule == "midpoint":
        return (lo + hi) / 2
    if rule == "balanced":
        return _balanced_point(lo, hi)
    raise ValueError(f"unknown threshold rule {rule!r}; expected one of {THRESHOLD_RULES}")


def replica_threshold(p0: float, p1: float, rule: str = "midpoint") -> float:
    if p0 - p1 < 1e-9:
        raise Degenerate(f"p0 - p1 = {p0 - p1:.3g}: the databases are independent")
    return _threshold(p1, p0, rule)


def _as_matrix(d) -> np.ndarray:
    return d.as_matrix() if isinstance(d, RaggedDatabase) else np.asarray(d)


def adjacent_distances(matrix: np.ndarray) -> np.ndarray:
    """Hamming distance between observed columns ``j`` and ``j + 1``."""
    if matrix.shape[1] < 2:
        return np.zeros(0, dtype=np.int64)
    return (matrix[:, 1:] != matrix[:, :-1]).sum(axis=0)


def detect_replicas(d2, tau: float) -> RunStructure:
    """Merge consecutive columns with ``d_H < m * tau`` into one run."""
    matrix = _as_matrix(d2)
    m, k = matrix.shape
    if k == 0:
        return RunStructure(())
    same = adjacent_distances(matrix) < m * tau
    lengths = []
    current = 1
    for merge in same:
        if merge:
            current += 1
        else:
            lengths.append(current)
            current = 1
    lengths.append(current)
    return RunStructure(tuple(int(x) for x in lengths))


def true_runs(s_pattern: np.ndarray) -> RunStructure:
    return RunStructure(tuple(int(s) for s in s_pattern if s > 0))


def replica_error_bound(constants: DetectionConstants, m: int, k: float) -> float:
    """Union bound ``(K-1)[2^{-m D(tau||p0)} + 2^{-m D(1-tau||1-p1)}]``."""
    c = constants
    return max(k - 1, 0) * (2 ** (-m * kl_bernoulli(c.tau, c.p0)) + 2 ** (-m * kl_bernoulli(1 - c.tau, 1 - c.p1)))


# -- seeded deletion detection --------------------------------------------

def sigma_gap(spec: SourceSpec, noise: NoiseChannel, sigma) -> tuple[float, float]:
    """``(q0', q1')`` after relabeling each observed symbol ``y`` as ``sigma[y]``."""
    u = spec.pi
    w = noise.matrix
    inv = np.argsort(np.asarray(sigma))
    # remapped[i, j] = p(sigma^{-1}(j) | i)
    remapped = w[:, inv]
    q0p = float(np.sum(np.outer(u, u) * (1 - remapped)))
    q1p = float(np.sum(u * (1 - np.diag(remapped))))
    return q0p, q1p


def choose_sigma(spec: SourceSpec, noise: NoiseChannel, rule: str = "midpoint") -> DetectionConstants:
    """Exhaustive search for the remapping with the largest ``q0' - q1'`` gap."""
    q = spec.alphabet_size
    if q > MAX_SIGMA_ALPHABET:
        raise ValueError(f"exhaustive sigma search supports alphabets up to {MAX_SIGMA_ALPHABET}")
    best = None
    for sigma in itertools.permutations(range(q)):
        q0p, q1p = sigma_gap(spec, noise, sigma)
        gap = q0p - q1p
        if best is None or gap > best[0] + 1e-15:
            best = (gap, sigma, q0p, q1p)
    gap, sigma, q0p, q1p = best
    if gap < 1e-9:
        raise IndependentDatabases(f"largest remapping gap is {gap:.3g}")
    q0_min = (1 - spec.gamma) * q0p + spec.gamma * q1p
    tau_bar = _threshold(q1p, q0_min, rule)
    p0, p1 = replica_probs(spec, noise)
    tau = replica_threshold(p0, p1, rule)
    return DetectionConstants(p0, p1, tau, tuple(sigma), q0p, q1p, q0_min, tau_bar)


def reduce_runs(matrix: np.ndarray, runs: RunStructure) -> np.ndarray:
    """Keep the first observed column of every run."""
    return matrix[:, runs.starts]


def detect_deletions_seeded(seeds: SeedPair | None, runs: RunStructure, constants: DetectionConstants) -> np.ndarray:
    """Length-``n`` vector with 1 where the reference column is judged deleted."""
    if seeds is None or seeds.lam == 0:
        raise NoSeeds("seeded deletion detection needs at least one seed pair")
    g1 = np.asarray(seeds.g1)
    lam, n = g1.shape
    if runs.total == 0:
        return np.ones(n, dtype=np.int8)
    g2 = seeds.g2.as_matrix()
    lut = np.asarray(constants.sigma, dtype=g2.dtype) + 1
    reduced = lut[reduce_runs(g2, runs).astype(np.int64) - 1]
    dist = (g1[:, :, None] != reduced[:, None, :]).sum(axis=0)
    retained = (dist <= lam * constants.tau_bar).any(axis=1)
    return (~retained).astype(np.int8)


def detect_deletions_aligned(seeds: SeedPair | None, runs: RunStructure, constants: DetectionConstants) -> np.ndarray:
    """Order-aware variant: retained columns form a monotone match with the runs.

    Picks the ``K_runs`` reference columns, in order, that maximize the summed
    log-likelihood ratio of "same column" versus "different column" given the
    seed distances.
    """
    if seeds is None or seeds.lam == 0:
        raise NoSeeds("seeded deletion detection needs at least one seed pair")
    g1 = np.asarray(seeds.g1)
    lam, n = g1.shape
    k = len(runs.run_lengths)
    if k == 0:
        return np.ones(n, dtype=np.int8)
    if k > n:
        return np.zeros(n, dtype=np.int8)
    g2 = seeds.g2.as_matrix()
    lut = np.asarray(constants.sigma, dtype=g2.dtype) + 1
    reduced = lut[reduce_runs(g2, runs).astype(np.int64) - 1]
    dist = (g1[:, :, None] != reduced[:, None, :]).sum(axis=0)
    # Clip the laws away from 0 and 1 so the noiseless case stays finite.
    q1 = min(max(constants.q1_prime, 1e-9), 1 - 1e-9)
    q0 = min(max(constants.q0_min, 1e-9), 1 - 1e-9)
    llr = dist * math.log2(q1 / q0) + (lam - dist) * math.log2((1 - q1) / (1 - q0))
    # best[i, r]: best total using reference columns < i for runs < r.
    best = np.full((n + 1, k + 1), -np.inf)
    best[:, 0] = 0.0
    take = np.zeros((n + 1, k + 1), dtype=bool)
    for i in range(1, n + 1):
        skip = best[i - 1, 1:]
        use = best[i - 1, :-1] + llr[i - 1]
        take[i, 1:] = use > skip
        best[i, 1:] = np.maximum(skip, use)
    deleted = np.ones(n, dtype=np.int8)
    r = k
    for i in range(n, 0, -1):
        if r > 0 and take[i, r]:
            deleted[i - 1] = 0
            r -= 1
    return deleted


def seeded_error_bound(constants: DetectionConstants, lam: int, n: int) -> float:
    """``n^2 2^{-L D(tau_bar||q0_min)} + n 2^{-L D(1-tau_bar||1-q1')}``."""
    c = constants
    return n**2 * 2 ** (-lam * kl_bernoulli(c.tau_bar, c.q0_min)) + n * 2 ** (-lam * kl_bernoulli(1 - c.tau_bar, 1 - c.q1_prime))


def combine_estimates(runs: RunStructure, deleted: np.ndarray) -> RepetitionEstimate | None:
    """Assign run lengths to retained columns; ``None`` if the counts disagree."""
    retained = np.flatnonzero(np.asarray(deleted) == 0)
    if len(retained) != len(runs.run_lengths):
        return None
    s_hat = np.zeros(len(deleted), dtype=np.int64)
    s_hat[retained] = runs.run_lengths
    return RepetitionEstimate(s_hat)


# -- histogram detection --------------------------------------------------

def collapse(d, pivot_symbol: int = 1) -> np.ndarray:
    d = np.asarray(d)
    return np.where(d == pivot_symbol, 1, 2).astype(d.dtype)


def column_histograms(d, pivot_symbol: int = 1) -> np.ndarray:
    """Per column, the number of entries that collapse to symbol 2."""
    return (np.asarray(d) != pivot_symbol).sum(axis=0)


def full_column_histograms(d, alphabet_size: int) -> np.ndarray:
    """``n x q`` matrix of symbol counts per column."""
    d = np.asarray(d)
    n = d.shape[1]
    out = np.zeros((n, alphabet_size), dtype=np.int64)
    for j in range(n):
        out[j] = np.bincount(d[:, j], minlength=alphabet_size + 1)[1:alphabet_size + 1]
    return out


def _histogram_keys(d, collapsed: bool, alphabet_size: int | None) -> list:
    if collapsed:
        return column_histograms(d).tolist()
    q = alphabet_size or int(np.max(d, initial=1))
    return [tuple(row) for row in full_column_histograms(d, q).tolist()]


def detect_repetitions_histogram(d1, d2, collapsed: bool = True, alphabet_size: int | None = None) -> RepetitionEstimate:
    """``S_hat[j]`` = number of observed columns whose histogram equals column ``j``'s.

    With ``collapsed=False`` full symbol-count histograms are compared
    instead of the binary pivot counts.
    """
    d1 = np.asarray(d1)
    matrix = _as_matrix(d2)
    if collapsed is False and alphabet_size is None:
        alphabet_size = int(max(np.max(d1, initial=1), np.max(matrix, initial=1)))
    h1 = _histogram_keys(d1, collapsed, alphabet_size)
    if len(set(h1)) != len(h1):
        raise DuplicateHistograms("two reference columns share a histogram")
    counts: dict = {}
    for h in (_histogram_keys(matrix, collapsed, alphabet_size) if matrix.shape[1] else []):
        counts[h] = counts.get(h, 0) + 1
    return RepetitionEstimate(np.array([counts.get(h, 0) for h in h1], dtype=np.int64))
