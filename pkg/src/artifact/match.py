"""Row matching schemes.

Every matcher decodes a set of observed (D2) rows and reports, per row,
the accepted reference (D1) row or the reason for failure.  A row is
matched only when exactly one candidate passes the acceptance test; two or
more accepted candidates are a collision, never resolved by best score.

Two acceptance tests are available for the noisy schemes:

* ``"likelihood"`` (default): the candidate row must be weakly typical for
  the source, and a log-likelihood statistic of the observation must clear
  an entropy-derived threshold.  The identical and seedless schemes use the
  information density ``log2 p(y|x) - log2 p(y)`` against
  ``sum_runs I(X; Y^s) - n epsilon``, where ``p(y)`` is the product of
  per-run marginals.  The independent scheme uses ``log2 p(y|x)`` against
  ``-K (H(Y|X) + epsilon)``.  Where columns may be deleted, the statistic
  is maximized over order-preserving alignments by dynamic programming.
* ``"robust"`` / ``"exact"``: empirical frequency tables must lie within a
  relative tolerance ``epsilon`` of the model law cell by cell.  The exact
  subsequence search is exponential and is meant for tiny instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .bounds import channel_mutual_information, entropy, entropy_rate, replica_block_channel
from .detect import (
    DetectionConstants,
    choose_sigma,
    combine_estimates,
    detect_deletions_aligned,
    detect_deletions_seeded,
    detect_replicas,
    detect_repetitions_histogram,
)
from .errors import BudgetExceeded, DuplicateHistograms, InstanceTooLarge, NoSeeds, UnequalRowLengths
from .source import GroundTruth, NoiseChannel, ProblemInstance, RaggedDatabase, SourceSpec, transition_matrix

EXACT_MAX_LENGTH = 14
LOG_FLOOR = -1e7  # stands in for log2(0) inside matrix products
SCORE_CHUNK = 512


class Status(IntEnum):
    MATCHED = 0
    COLLISION = 1
    NO_MATCH = 2
    DETECTION_FAILED = 3


@dataclass(frozen=True)
class TypicalityParams:
    epsilon: float = 0.1
    test: str = "likelihood"

    def __post_init__(self):
        if not 0 < self.epsilon:
            raise ValueError("epsilon must be positive")
        if self.test not in ("likelihood", "robust", "exact"):
            raise ValueError(f"unknown acceptance test {self.test!r}")


@dataclass
class MatchOutcome:
    """Decisions for the observed rows listed in ``rows``.

    ``theta_hat[k]`` is the reference row assigned to observed row
    ``rows[k]``, or -1 when no unique candidate was accepted.
    """

    rows: np.ndarray
    theta_hat: np.ndarray
    statuses: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def failed(cls, rows, reason: str) -> "MatchOutcome":
        rows = np.asarray(rows, dtype=np.int64)
        return cls(rows, np.full(len(rows), -1, dtype=np.int64),
                   np.full(len(rows), Status.DETECTION_FAILED, dtype=np.int8), {"detection_error": reason})

    @classmethod
    def from_counts(cls, rows, counts: np.ndarray, first: np.ndarray, **diagnostics) -> "MatchOutcome":
        """Build statuses from per-row accepted counts and the first accepted index."""
        counts = np.asarray(counts)
        statuses = np.where(counts == 1, Status.MATCHED, np.where(counts == 0, Status.NO_MATCH, Status.COLLISION))
        theta_hat = np.where(counts == 1, first, -1).astype(np.int64)
        return cls(np.asarray(rows, dtype=np.int64), theta_hat, statuses.astype(np.int8), dict(diagnostics))

    def errors(self, truth: GroundTruth) -> np.ndarray:
        return self.theta_hat != truth.inverse()[self.rows]

    def error_count(self, truth: GroundTruth) -> int:
        return int(self.errors(truth).sum())

    def count(self, status: Status) -> int:
        return int((self.statuses == status).sum())

    def summary(self, truth: GroundTruth) -> dict:
        total = len(self.rows)
        return {
            "rows": total,
            "error_rate": self.error_count(truth) / total if total else 0.0,
            "collisions": self.count(Status.COLLISION),
            "nomatch": self.count(Status.NO_MATCH),
            "detection_failures": self.count(Status.DETECTION_FAILED),
        }

    def to_dict(self) -> dict:
        return {
            "rows": self.rows.tolist(),
            "theta_hat": self.theta_hat.tolist(),
            "statuses": [Status(s).name.lower() for s in self.statuses],
        }


@dataclass(frozen=True)
class AlignmentScore:
    value: float
    x_length: int
    y_length: int


# -- shared helpers -------------------------------------------------------

def _all_rows(m: int, rows) -> np.ndarray:
    return np.arange(m, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)


def log_channel(noise: NoiseChannel) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log2(noise.matrix)


def row_log_probs(x: np.ndarray, source: SourceSpec) -> np.ndarray:
    """``log2 p(x)`` of each row under the stationary Markov source."""
    x = np.asarray(x, dtype=np.int64) - 1
    logpi = np.log2(source.pi)
    out = logpi[x[:, 0]].astype(float)
    if x.shape[1] > 1:
        logp = np.log2(transition_matrix(source))
        out += logp[x[:, :-1], x[:, 1:]].sum(axis=1)
    return out


def expected_row_entropy(source: SourceSpec, n: int) -> float:
    """``E[-log2 p(X^n)] / n`` for the stationary source."""
    rate = entropy_rate(transition_matrix(source), source.pi)
    return (entropy(source.pi) + (n - 1) * rate) / n


def row_typical(x: np.ndarray, source: SourceSpec, epsilon: float) -> np.ndarray:
    """Weak typicality of each row of ``x``."""
    n = x.shape[1]
    if n == 0:
        return np.ones(x.shape[0], dtype=bool)
    h = -row_log_probs(x, source) / n
    return np.abs(h - expected_row_entropy(source, n)) <= epsilon


def score_threshold(k: int, source: SourceSpec, noise: NoiseChannel, epsilon: float) -> float:
    """Minimum accepted log-likelihood of ``k`` observed symbols."""
    h = conditional_entropy_y_given_x(source.pi, noise)
    return -k * (h + epsilon) - 1e-9


def conditional_entropy_y_given_x(px, noise: NoiseChannel) -> float:
    joint = np.asarray(px)[:, None] * noise.matrix
    return entropy(joint) - entropy(joint.sum(axis=1))


def _robust_ok(counts: np.ndarray, probs: np.ndarray, epsilon: float) -> bool:
    """Relative cellwise closeness; cells of probability 0 must be empty."""
    total = counts.sum()
    if total == 0:
        return True
    freq = counts / total
    return bool(np.all(np.abs(freq - probs) <= epsilon * probs + 1e-12))


def _decide(rows, accept: np.ndarray, **diagnostics) -> MatchOutcome:
    """``accept`` is a ``len(rows) x m`` boolean matrix."""
    counts = accept.sum(axis=1)
    first = np.argmax(accept, axis=1) if accept.shape[1] else np.zeros(len(rows), dtype=np.int64)
    return MatchOutcome.from_counts(rows, counts, first, **diagnostics)


# -- identical repetition -------------------------------------------------

def run_starts(s_hat: np.ndarray) -> np.ndarray:
    lengths = np.asarray(s_hat)[np.asarray(s_hat) > 0]
    return np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64) if len(lengths) else np.zeros(0, np.int64)


def column_log_likelihoods(y: np.ndarray, s_hat: np.ndarray, noise: NoiseChannel) -> np.ndarray:
    """``L[r, j, x] = sum over the replicas of column j of log2 W(y | x)``.

    ``y`` is an ``R x K`` matrix of observed rows sharing the pattern ``s_hat``.
    Deleted columns contribute 0.
    """
    y = np.asarray(y, dtype=np.int64)
    s_hat = np.asarray(s_hat)
    n = len(s_hat)
    q = noise.alphabet_size
    out = np.zeros((y.shape[0], n, q))
    kept = np.flatnonzero(s_hat > 0)
    if len(kept) == 0:
        return out
    logw_t = np.maximum(log_channel(noise), LOG_FLOOR).T  # [y, x]
    per_symbol = logw_t[y - 1]  # R x K x q
    out[:, kept, :] = np.add.reduceat(per_symbol, run_starts(s_hat), axis=1)
    return out


def _one_hot(x: np.ndarray, q: int) -> np.ndarray:
    m, n = x.shape
    hot = np.zeros((m, n * q))
    hot[np.arange(m)[:, None], np.arange(n) * q + (np.asarray(x, dtype=np.int64) - 1)] = 1.0
    return hot


def candidate_scores(loglik: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``scores[r, i] = sum_j loglik[r, j, x[i, j]]`` as one matrix product."""
    r, n, q = loglik.shape
    return loglik.reshape(r, n * q) @ _one_hot(x, q).T


def is_jointly_typical_identical(x_row, y_row, s_hat, spec: SourceSpec, noise: NoiseChannel, ps, params: TypicalityParams) -> bool:
    """Robust typicality of ``(x, y, s_hat)`` under the identical-repetition law."""
    x = np.asarray(x_row, dtype=np.int64) - 1
    y = np.asarray(y_row, dtype=np.int64) - 1
    s_hat = np.asarray(s_hat, dtype=np.int64)
    q = spec.alphabet_size
    eps = params.epsilon
    ps = np.asarray(ps, dtype=float)
    if s_hat.max(initial=0) >= len(ps):
        return False
    xs = np.zeros((q, len(ps)))
    np.add.at(xs, (x, s_hat), 1)
    if not _robust_ok(xs, np.outer(spec.pi, ps), eps):
        return False
    xy = np.zeros((q, q))
    np.add.at(xy, (np.repeat(x, s_hat), y), 1)
    if not _robust_ok(xy, spec.pi[:, None] * noise.matrix, eps):
        return False
    if spec.gamma > 0 and len(x) > 1:
        tr = np.zeros((q, q))
        np.add.at(tr, (x[:-1], x[1:]), 1)
        if not _robust_ok(tr, spec.pi[:, None] * transition_matrix(spec), eps):
            return False
    return True


def identical_detection(inst: ProblemInstance, constants: DetectionConstants, deletion_rule: str = "threshold"):
    """Replica runs plus seeded deletion detection; ``s_hat`` is None on failure."""
    if inst.seeds is None or inst.seeds.lam == 0:
        raise NoSeeds("the identical-repetition scheme needs seeds")
    runs = detect_replicas(inst.d2, constants.tau)
    if deletion_rule == "threshold":
        deleted = detect_deletions_seeded(inst.seeds, runs, constants)
    elif deletion_rule == "aligned":
        deleted = detect_deletions_aligned(inst.seeds, runs, constants)
    else:
        raise ValueError(f"unknown deletion rule {deletion_rule!r}")
    est = combine_estimates(runs, deleted)
    return runs, deleted, None if est is None else est.s_hat


def match_identical(
    inst: ProblemInstance,
    constants: DetectionConstants | None = None,
    params: TypicalityParams = TypicalityParams(),
    rows=None,
    deletion_rule: str = "threshold",
    virtual_rows: int = 0,
    rng: np.random.Generator | None = None,
) -> MatchOutcome:
    """Seeded matching under identical repetition.

    ``virtual_rows`` adds that many further independent reference rows
    without generating them: for each decoded row the number of them that
    pass the test is drawn from a binomial law whose success probability
    is computed exactly by ``competitor_acceptance_probability``.  This
    lets experiments reach database sizes far beyond memory.
    """
    constants = constants or choose_sigma(inst.source, inst.noise)
    rows = _all_rows(inst.m, rows)
    try:
        runs, deleted, s_hat = identical_detection(inst, constants, deletion_rule)
    except UnequalRowLengths:
        return MatchOutcome.failed(rows, "observed rows differ in length")
    if s_hat is None:
        return MatchOutcome.failed(rows, "retained columns disagree with the replica runs")
    y = inst.d2.as_matrix()[rows]
    diag = {"s_hat": s_hat.tolist()}
    if params.test == "likelihood":
        scores, thresholds = _identical_statistics(y, s_hat, inst, params.epsilon)
        accept = (scores >= thresholds[:, None]) & row_typical(inst.d1, inst.source, params.epsilon)
        if virtual_rows <= 0:
            return _decide(rows, accept, **diag)
        rng = rng or np.random.default_rng(0)
        extra = np.zeros(len(rows), dtype=np.int64)
        for k in range(len(rows)):
            ll = column_log_likelihoods(y[k:k + 1], s_hat, inst.noise)[0]
            p = competitor_acceptance_probability(ll, inst.source, thresholds[k], params.epsilon)
            extra[k] = rng.binomial(virtual_rows, min(p, 1.0))
        counts = accept.sum(axis=1) + extra
        first = np.argmax(accept, axis=1)
        # A virtual acceptance alone is a match to a row outside D1: record -2.
        first = np.where(accept.sum(axis=1) == 0, -2, first)
        return MatchOutcome.from_counts(rows, counts, first, virtual_accepts=extra.tolist(), **diag)
    ps = inst.repetition.ps
    accept = np.array([
        [is_jointly_typical_identical(x, yr, s_hat, inst.source, inst.noise, ps, params) for x in inst.d1]
        for yr in y
    ]).reshape(len(rows), inst.m)
    return _decide(rows, accept, **diag)


def _identical_statistics(y: np.ndarray, s_hat: np.ndarray, inst: ProblemInstance, epsilon: float):
    hot = _one_hot(inst.d1, inst.source.alphabet_size).T
    scores = np.empty((y.shape[0], inst.m))
    thresholds = np.empty(y.shape[0])
    lengths = s_hat[s_hat > 0]
    for lo in range(0, y.shape[0], SCORE_CHUNK):
        ll = column_log_likelihoods(y[lo:lo + SCORE_CHUNK], s_hat, inst.noise)
        scores[lo:lo + SCORE_CHUNK] = ll.reshape(ll.shape[0], -1) @ hot
        thresholds[lo:lo + SCORE_CHUNK] = density_thresholds(ll, lengths, inst.source, inst.noise, epsilon, inst.n)
    return scores, thresholds


def run_information(lengths, source: SourceSpec, noise: NoiseChannel) -> float:
    """``sum_r I(X; Y^{s_r})`` with ``X ~ pi`` and ``s_r`` replicas per run."""
    cache: dict = {}
    total = 0.0
    for s in lengths:
        s = int(s)
        if s not in cache:
            cache[s] = channel_mutual_information(source.pi, replica_block_channel(noise.matrix, s)) if s > 0 else 0.0
        total += cache[s]
    return total


def log_marginal(loglik: np.ndarray, source: SourceSpec) -> np.ndarray:
    """``sum_units log2 sum_x pi(x) 2^{loglik[..., unit, x]}`` per row."""
    top = loglik.max(axis=-1, keepdims=True)
    inner = (source.pi * np.exp2(loglik - top)).sum(axis=-1)
    return (np.log2(inner) + top[..., 0]).sum(axis=-1)


def density_thresholds(loglik: np.ndarray, lengths, source: SourceSpec, noise: NoiseChannel, epsilon: float, n: int) -> np.ndarray:
    """Least accepted ``log2 p(y|x)`` per row under the information-density test."""
    return log_marginal(loglik, source) + run_information(lengths, source, noise) - epsilon * n - 1e-9


def competitor_acceptance_probability(loglik: np.ndarray, source: SourceSpec, threshold: float, epsilon: float) -> float:
    """Probability that a fresh source row passes the score test.

    ``loglik`` is the ``n x q`` table of one observed row.  Exact dynamic
    program over columns with state (last symbol, log p(x), score); both
    running sums are rounded to 1e-9 to merge equal values.
    """
    n, q = loglik.shape
    logpi = np.log2(source.pi)
    logp = np.log2(transition_matrix(source))
    trans = transition_matrix(source)
    center = expected_row_entropy(source, n)
    # States that cannot reach the threshold any more are dropped.
    reach = np.concatenate([np.cumsum(loglik.max(axis=1)[::-1])[::-1][1:], [0.0]]) - 1e-9
    states: dict = {}
    for a in range(q):
        if loglik[0, a] + reach[0] < threshold:
            continue
        key = (a, round(logpi[a], 9), round(loglik[0, a], 9))
        states[key] = states.get(key, 0.0) + source.pi[a]
    for j in range(1, n):
        nxt: dict = {}
        for (a, lp, sc), pr in states.items():
            for b in range(q):
                sc2 = sc + loglik[j, b]
                if sc2 + reach[j] < threshold:
                    continue
                key = (b, round(lp + logp[a, b], 9), round(sc2, 9))
                nxt[key] = nxt.get(key, 0.0) + pr * trans[a, b]
        states = nxt
    total = 0.0
    for (_, lp, sc), pr in states.items():
        if sc >= threshold and abs(-lp / n - center) <= epsilon:
            total += pr
    return total


# -- noiseless and adversarial --------------------------------------------

def _row_keys(x: np.ndarray, base: int) -> np.ndarray:
    """Sortable per-row keys: base-``base`` integers when they fit, else raw bytes."""
    if x.shape[1] * math.log2(base) < 62:
        weights = base ** np.arange(x.shape[1], dtype=np.int64)
        return x.astype(np.int64) @ weights
    x = np.ascontiguousarray(x)
    return x.view(np.dtype((np.void, x.dtype.itemsize * x.shape[1]))).ravel()


def exact_agreement(d1: np.ndarray, reduced: np.ndarray, kept: np.ndarray, rows) -> MatchOutcome:
    """Match each reduced observed row to the reference rows equal on ``kept``."""
    m = d1.shape[0]
    if len(kept) == 0:
        return MatchOutcome.from_counts(rows, np.full(len(rows), m), np.zeros(len(rows), dtype=np.int64))
    base = int(max(d1.max(initial=0), reduced.max(initial=0))) + 1
    keys1 = _row_keys(d1[:, kept].astype(np.int16), base)
    keys2 = _row_keys(reduced.astype(np.int16), base)
    uniq, first, counts = np.unique(keys1, return_index=True, return_counts=True)
    order = np.argsort(keys2, kind="stable")
    pos = np.empty(len(keys2), dtype=np.int64)
    pos[order] = np.searchsorted(uniq, keys2[order])
    pos = np.minimum(pos, len(uniq) - 1)
    found = uniq[pos] == keys2
    return MatchOutcome.from_counts(rows, np.where(found, counts[pos], 0), first[pos])


def match_noiseless(d1, d2: RaggedDatabase, collapsed: bool = False, alphabet_size: int | None = None, rows=None) -> MatchOutcome:
    """Histogram detection followed by exact agreement on the retained columns.

    Full symbol-count histograms are used unless ``collapsed`` is set.
    """
    d1 = np.asarray(d1)
    rows = _all_rows(d1.shape[0], rows)
    if not d2.is_rectangular():
        return MatchOutcome.failed(rows, "observed rows differ in length")
    y = d2.as_matrix()
    try:
        s_hat = detect_repetitions_histogram(d1, y, collapsed=collapsed, alphabet_size=alphabet_size).s_hat
    except DuplicateHistograms:
        return MatchOutcome.failed(rows, "duplicate reference histograms")
    if int(s_hat.sum()) != y.shape[1]:
        return MatchOutcome.failed(rows, "histogram multiplicities disagree with the observed width")
    kept = np.flatnonzero(s_hat > 0)
    out = exact_agreement(d1, y[rows][:, run_starts(s_hat)], kept, rows)
    out.diagnostics["s_hat"] = s_hat.tolist()
    return out


def match_adversarial(d1, d2: RaggedDatabase, alphabet_size: int | None = None, rows=None) -> MatchOutcome:
    """Deletion-only noiseless matching; a second agreeing row is a collision."""
    return match_noiseless(d1, d2, collapsed=False, alphabet_size=alphabet_size, rows=rows)


def deletion_budget(n: int, delta: float) -> int:
    return int(math.floor(n * delta + 1e-9))


def adversary_delete(d1, delta: float, strategy="greedy", rng: np.random.Generator | None = None, target: int | None = None) -> np.ndarray:
    """Columns to delete, at most ``floor(n delta)`` of them.

    ``strategy`` is ``"random"``, ``"greedy"`` or an explicit index list.
    With ``target`` the greedy adversary tries to make that row collide
    with another; without it, it maximizes the number of colliding pairs.
    """
    d1 = np.asarray(d1)
    m, n = d1.shape
    budget = deletion_budget(n, delta)
    if not isinstance(strategy, str):
        chosen = np.unique(np.asarray(list(strategy), dtype=np.int64))
        if len(chosen) > budget:
            raise BudgetExceeded(f"{len(chosen)} deletions exceed the budget {budget}")
        return chosen
    if budget == 0:
        return np.zeros(0, dtype=np.int64)
    if strategy == "random":
        rng = rng or np.random.default_rng(0)
        return np.sort(rng.choice(n, size=budget, replace=False)).astype(np.int64)
    if strategy != "greedy":
        raise ValueError(f"unknown adversary strategy {strategy!r}")
    if target is not None:
        return _greedy_target(d1, target, budget)
    return _greedy_pairs(d1, budget)


def _fill(deleted: list, diff: np.ndarray, budget: int) -> np.ndarray:
    """Top up ``deleted`` with the columns most often in disagreement."""
    freq = diff.sum(axis=0).astype(float)
    freq[deleted] = -1
    for col in np.argsort(-freq, kind="stable"):
        if len(deleted) >= budget:
            break
        if col not in deleted:
            deleted.append(int(col))
    return np.sort(np.asarray(deleted, dtype=np.int64))


def _greedy_target(d1: np.ndarray, target: int, budget: int) -> np.ndarray:
    diff = d1 != d1[target]
    diff[target] = False
    others = np.delete(np.arange(d1.shape[0]), target)
    deleted: list = []
    if len(others):
        dist = diff[others].sum(axis=1)
        nearest = others[np.argmin(dist)]
        if dist.min() <= budget:
            deleted = [int(c) for c in np.flatnonzero(diff[nearest])]
    return _fill(deleted, diff[others] if len(others) else diff, budget)


def _greedy_pairs(d1: np.ndarray, budget: int) -> np.ndarray:
    m, n = d1.shape
    if m > 512:
        raise InstanceTooLarge("pairwise greedy adversary is limited to 512 rows")
    i, j = np.triu_indices(m, 1)
    diff = d1[i] != d1[j]
    remaining = diff.sum(axis=1)
    alive = np.ones(n, dtype=bool)
    deleted: list = []
    for left in range(budget, 0, -1):
        gain = ((remaining[:, None] - diff[:, alive]) <= left - 1).sum(axis=0)
        col = int(np.flatnonzero(alive)[np.argmax(gain)])
        deleted.append(col)
        alive[col] = False
        remaining = remaining - diff[:, col]
    return np.sort(np.asarray(deleted, dtype=np.int64))


# -- independent repetition and seedless ----------------------------------

def _alignment_dp(symbols: np.ndarray, gains: np.ndarray) -> np.ndarray:
    """Best order-preserving alignment for a batch of candidate strings.

    ``symbols`` is ``c x L`` (0-based), ``gains[t, x]`` the reward for
    aligning observed unit ``t`` with symbol ``x``.  Returns ``c`` scores.
    """
    c, length = symbols.shape
    k = gains.shape[0]
    dp = np.full((c, k + 1), -np.inf)
    dp[:, 0] = 0.0
    if k == 0:
        return dp[:, 0]
    for i in range(length):
        step = gains[:, symbols[:, i]].T  # c x k
        cand = dp[:, :-1] + step
        np.maximum(dp[:, 1:], cand, out=dp[:, 1:])
    return dp[:, k]


def best_alignment_score(x_stretched, y, noise: NoiseChannel) -> AlignmentScore:
    """Max over injections of ``y`` into ``x_stretched`` of the log-likelihood."""
    x = np.asarray(x_stretched, dtype=np.int64)[None, :] - 1
    y = np.asarray(y, dtype=np.int64) - 1
    gains = log_channel(noise)[:, y].T
    return AlignmentScore(float(_alignment_dp(x, gains)[0]), x.shape[1], len(y))


def stretch(x: np.ndarray, s_max: int) -> np.ndarray:
    """Repeat each entry ``s_max`` times (along the last axis)."""
    return np.repeat(np.asarray(x), s_max, axis=-1)


def subsequence_typical_exists(x_stretched, y, spec: SourceSpec, noise: NoiseChannel, params: TypicalityParams,
                               run_lengths=None, ps_hat=None) -> bool:
    """Is some subsequence of ``x_stretched`` jointly typical with ``y``?

    With ``run_lengths`` the observation is a sequence of runs; each run is
    aligned with one symbol of ``x_stretched`` and the (x, run length) table
    is also checked against ``p_X x ps_hat``.
    """
    x = np.asarray(x_stretched, dtype=np.int64) - 1
    y = np.asarray(y, dtype=np.int64) - 1
    q = spec.alphabet_size
    lengths = [1] * len(y) if run_lengths is None else [int(s) for s in run_lengths]
    units = len(lengths)
    if units > EXACT_MAX_LENGTH:
        raise InstanceTooLarge(f"exact typical-subsequence search is limited to {EXACT_MAX_LENGTH} units")
    if units > len(x):
        return False
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    with_s = run_lengths is not None
    s_cols = len(ps_hat) if with_s else 0

    def increment(sym: int, r: int) -> tuple:
        inc = [0] * (q * q + q * s_cols)
        for t in range(bounds[r], bounds[r + 1]):
            inc[sym * q + y[t]] += 1
        if with_s:
            inc[q * q + sym * s_cols + lengths[r]] += 1
        return tuple(inc)

    zero = tuple([0] * (q * q + q * s_cols))
    # reach[r] = tables after aligning the first r units with a prefix of x.
    reach = [set() for _ in range(units + 1)]
    reach[0].add(zero)
    for i in range(len(x)):
        for r in range(min(i, units - 1), -1, -1):
            if not reach[r]:
                continue
            inc = increment(int(x[i]), r)
            reach[r + 1].update(tuple(a + b for a, b in zip(t, inc)) for t in reach[r])
    pxy = (spec.pi[:, None] * noise.matrix).ravel()
    pxs = np.outer(spec.pi, ps_hat).ravel() if with_s else None
    for t in reach[units]:
        arr = np.array(t, dtype=float)
        if not _robust_ok(arr[: q * q], pxy, params.epsilon):
            continue
        if with_s and not _robust_ok(arr[q * q:], pxs, params.epsilon):
            continue
        return True
    return False


def match_independent(
    d1,
    d2: RaggedDatabase,
    a_matrix,
    source: SourceSpec,
    noise: NoiseChannel,
    ps,
    params: TypicalityParams = TypicalityParams(),
    rows=None,
) -> MatchOutcome:
    """Matching under independent repetition with revealed deletions ``a_matrix``.

    Revealed columns are dropped from each candidate, which is then
    stretched ``s_max`` times so that the observation is a subsequence.
    """
    d1 = np.asarray(d1)
    a_matrix = np.asarray(a_matrix)
    rows = _all_rows(d1.shape[0], rows)
    s_max = int(np.flatnonzero(np.asarray(ps) > 0)[-1])
    typical = row_typical(d1, source, params.epsilon)
    logw = log_channel(noise)
    accept = np.zeros((len(rows), d1.shape[0]), dtype=bool)
    best = np.full(len(rows), -1, dtype=np.int64)
    for k, l in enumerate(rows):
        y = d2.row(l).astype(np.int64)
        keep = a_matrix[l] == 0
        cand = stretch(d1[:, keep], s_max).astype(np.int64)
        if len(y) > cand.shape[1]:
            continue
        if params.test == "exact":
            accept[k] = typical & np.array([subsequence_typical_exists(c, y, source, noise, params) for c in cand])
            continue
        scores = _alignment_dp(cand - 1, logw[:, y - 1].T)
        best[k] = int(np.argmax(scores))
        accept[k] = typical & (scores >= score_threshold(len(y), source, noise, params.epsilon))
    return _decide(rows, accept, argmax=best.tolist())


def seedless_run_law(ps) -> np.ndarray:
    """Run-length law of retained columns: ``p_S(s) / (1 - delta)`` for ``s >= 1``."""
    ps = np.asarray(ps, dtype=float)
    out = ps.copy()
    out[0] = 0.0
    return out / (1 - ps[0])


def match_seedless(
    inst: ProblemInstance,
    constants: DetectionConstants | None = None,
    params: TypicalityParams = TypicalityParams(),
    rows=None,
) -> MatchOutcome:
    """Matching with replica detection only; runs are aligned to candidate columns."""
    constants = constants or choose_sigma(inst.source, inst.noise)
    rows = _all_rows(inst.m, rows)
    try:
        runs = detect_replicas(inst.d2, constants.tau)
    except UnequalRowLengths:
        return MatchOutcome.failed(rows, "observed rows differ in length")
    d1 = inst.d1.astype(np.int64)
    n_runs = len(runs.run_lengths)
    if n_runs == 0 or n_runs > inst.n:
        return MatchOutcome.from_counts(rows, np.zeros(len(rows), dtype=np.int64), np.zeros(len(rows), dtype=np.int64))
    y = inst.d2.as_matrix()[rows].astype(np.int64)
    typical = row_typical(inst.d1, inst.source, params.epsilon)
    accept = np.zeros((len(rows), inst.m), dtype=bool)
    best = np.full(len(rows), -1, dtype=np.int64)
    if params.test == "exact":
        law = seedless_run_law(inst.repetition.ps)
        for k in range(len(rows)):
            accept[k] = typical & np.array([
                subsequence_typical_exists(x, y[k], inst.source, inst.noise, params, runs.run_lengths, law) for x in d1
            ])
        return _decide(rows, accept)
    gains_all = np.add.reduceat(np.maximum(log_channel(inst.noise), LOG_FLOOR).T[y - 1], runs.starts, axis=1)
    thresholds = density_thresholds(gains_all, runs.run_lengths, inst.source, inst.noise, params.epsilon, inst.n)
    for k in range(len(rows)):
        scores = _alignment_dp(d1 - 1, gains_all[k])
        best[k] = int(np.argmax(scores))
        accept[k] = typical & (scores >= thresholds[k])
    return _decide(rows, accept, argmax=best.tolist(), runs=list(runs.run_lengths))
