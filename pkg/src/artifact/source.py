"""Random objects of the database matching model.

A reference database ``D1`` has i.i.d. rows, each a stationary Markov chain
with transition matrix ``P = gamma*I + (1-gamma)*U``.  The observed database
``D2`` is obtained by permuting the rows of ``D1``, repeating every entry
``S`` times (``S = 0`` deletes it) and passing the copies through a
memoryless noise channel.  Symbols are the integers ``1..q``; an empty
observation is a zero-length row segment.

Randomness
----------
Every generator takes an explicit :class:`numpy.random.Generator`.  Streams
for experiments come from :func:`child_rng`, which feeds
``(master_seed, *indices)`` to :class:`numpy.random.SeedSequence` and wraps
the result in a PCG64 bit generator.  SeedSequence hashing is specified by
numpy and is platform independent, so a given index tuple always yields the
same stream regardless of which worker process draws it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import SpecError

SYMBOL_DTYPE = np.int16
FORMAT_VERSION = 1
MODES = ("identical", "independent", "block")


def child_rng(master_seed: int, *indices: int) -> np.random.Generator:
    """Independent PCG64 stream keyed by ``(master_seed, *indices)``."""
    seq = np.random.SeedSequence([int(master_seed) & (2**64 - 1), *map(int, indices)])
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class SourceSpec:
    """Row law of the reference database."""

    alphabet_size: int
    gamma: float = 0.0
    u: tuple[float, ...] = ()

    def __post_init__(self):
        q = int(self.alphabet_size)
        if q < 2:
            raise SpecError(f"alphabet_size must be >= 2, got {q}")
        u = tuple(float(x) for x in self.u) if self.u else (1.0 / q,) * q
        object.__setattr__(self, "alphabet_size", q)
        object.__setattr__(self, "u", u)
        if len(u) != q:
            raise SpecError(f"u has length {len(u)}, expected {q}")
        if min(u) <= 0:
            raise SpecError("all entries of u must be positive")
        if abs(sum(u) - 1.0) > 1e-12:
            raise SpecError(f"u sums to {sum(u)!r}, not 1")
        if not 0.0 <= self.gamma < 1.0:
            raise SpecError(f"gamma must lie in [0, 1), got {self.gamma}")

    @classmethod
    def uniform(cls, alphabet_size: int, gamma: float = 0.0) -> "SourceSpec":
        return cls(alphabet_size, gamma)

    @property
    def pi(self) -> np.ndarray:
        """Stationary distribution (equal to ``u``)."""
        return np.asarray(self.u, dtype=float)

    def to_dict(self) -> dict:
        return {"alphabet_size": self.alphabet_size, "gamma": self.gamma, "u": list(self.u)}


@dataclass(frozen=True, eq=False)
class NoiseChannel:
    """Row-stochastic matrix with entry ``(x, y) = p(y | x)`` (0-based indices)."""

    matrix: np.ndarray

    def __post_init__(self):
        w = np.array(self.matrix, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise SpecError(f"noise matrix must be square, got shape {w.shape}")
        if (w < 0).any():
            raise SpecError("noise matrix has negative entries")
        if np.abs(w.sum(axis=1) - 1.0).max() > 1e-12:
            raise SpecError("noise matrix rows must sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "matrix", w)

    @classmethod
    def identity(cls, alphabet_size: int) -> "NoiseChannel":
        return cls(np.eye(alphabet_size))

    @classmethod
    def bsc(cls, flip: float) -> "NoiseChannel":
        return cls(np.array([[1 - flip, flip], [flip, 1 - flip]]))

    @classmethod
    def symmetric(cls, alphabet_size: int, error: float) -> "NoiseChannel":
        """q-ary symmetric channel: total error mass spread over the other symbols."""
        q = alphabet_size
        w = np.full((q, q), error / (q - 1))
        np.fill_diagonal(w, 1 - error)
        return cls(w)

    @property
    def alphabet_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.matrix, np.eye(self.alphabet_size)))

    def to_list(self) -> list:
        return self.matrix.tolist()


@dataclass(frozen=True)
class RepetitionSpec:
    """Distribution of the repeat count ``S`` and how rows share patterns.

    ``mode`` is ``"identical"`` (one pattern for every row), ``"independent"``
    (a fresh pattern per row) or ``"block"`` (``block_size`` consecutive rows
    share a pattern; the final block may be short).
    """

    ps: tuple[float, ...]
    mode: str = "identical"
    block_size: int = 1

    def __post_init__(self):
        ps = tuple(float(p) for p in self.ps)
        object.__setattr__(self, "ps", ps)
        if len(ps) < 2:
            raise SpecError("ps must cover at least {0, 1}")
        if min(ps) < 0 or abs(sum(ps) - 1.0) > 1e-12:
            raise SpecError(f"ps is not a probability vector: {ps}")
        if self.mode not in MODES:
            raise SpecError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "block" and self.block_size < 1:
            raise SpecError("block_size must be a positive integer")

    @classmethod
    def deletion(cls, delta: float, mode: str = "identical", block_size: int = 1) -> "RepetitionSpec":
        """``S ~ Bernoulli(1 - delta)``."""
        return cls((delta, 1.0 - delta), mode, block_size)

    @property
    def s_max(self) -> int:
        return len(self.ps) - 1

    def delta(self) -> float:
        return self.ps[0]

    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.ps)), self.ps))

    def block_rows(self, m: int) -> int:
        """Rows sharing one pattern (``m`` for identical mode)."""
        if self.mode == "identical":
            return max(m, 1)
        if self.mode == "independent":
            return 1
        return self.block_size

    def to_dict(self) -> dict:
        return {"ps": list(self.ps), "mode": self.mode, "block_size": self.block_size}


class RaggedDatabase:
    """Rows of varying length stored as one flat array plus row offsets."""

    def __init__(self, data: np.ndarray, offsets: np.ndarray):
        self.data = np.asarray(data, dtype=SYMBOL_DTYPE)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        if self.offsets[0] != 0 or self.offsets[-1] != len(self.data):
            raise ValueError("offsets do not span the data array")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "RaggedDatabase":
        lengths = [len(r) for r in rows]
        offsets = np.concatenate([[0], np.cumsum(lengths, dtype=np.int64)])
        data = np.concatenate([np.asarray(r, dtype=SYMBOL_DTYPE) for r in rows]) if rows else np.zeros(0)
        return cls(data, offsets)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "RaggedDatabase":
        matrix = np.asarray(matrix)
        m, k = matrix.shape
        return cls(matrix.ravel(), np.arange(m + 1, dtype=np.int64) * k)

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def row(self, i: int) -> np.ndarray:
        return self.data[self.offsets[i]:self.offsets[i + 1]]

    def rows(self) -> list[np.ndarray]:
        return [self.row(i) for i in range(len(self))]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def is_rectangular(self) -> bool:
        lengths = self.lengths
        return len(lengths) == 0 or bool((lengths == lengths[0]).all())

    def as_matrix(self) -> np.ndarray:
        """View as an ``m x K`` matrix; raises if rows differ in length."""
        from .errors import UnequalRowLengths

        if not self.is_rectangular():
            raise UnequalRowLengths("observed rows have different lengths")
        k = int(self.lengths[0]) if len(self) else 0
        return self.data.reshape(len(self), k)


@dataclass(eq=False)
class GroundTruth:
    """Hidden quantities: ``theta[i]`` is the D2 row holding D1 row ``i``.

    ``s_matrix`` and ``a_matrix`` are indexed by D2 row, so row ``theta[i]``
    describes what happened to D1 row ``i``.
    """

    theta: np.ndarray
    s_matrix: np.ndarray
    a_matrix: np.ndarray
    alpha: float = 0.0

    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.theta)
        inv[self.theta] = np.arange(len(self.theta))
        return inv


@dataclass(eq=False)
class SeedPair:
    """``lam`` known row pairs sharing the main pair's column pattern."""

    g1: np.ndarray
    g2: RaggedDatabase

    @property
    def lam(self) -> int:
        return self.g1.shape[0]


@dataclass(eq=False)
class ProblemInstance:
    d1: np.ndarray
    d2: RaggedDatabase
    truth: GroundTruth
    source: SourceSpec
    noise: NoiseChannel
    repetition: RepetitionSpec
    seeds: SeedPair | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.d1.shape[0]

    @property
    def n(self) -> int:
        return self.d1.shape[1]


def transition_matrix(spec: SourceSpec) -> np.ndarray:
    q = spec.alphabet_size
    return spec.gamma * np.eye(q) + (1 - spec.gamma) * np.tile(spec.pi, (q, 1))


def transition_power(spec: SourceSpec, r: int) -> np.ndarray:
    """``P**r`` in closed form, using ``U @ U = U``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    q = spec.alphabet_size
    g = spec.gamma**r
    return g * np.eye(q) + (1 - g) * np.tile(spec.pi, (q, 1))


def _sample_symbols(rng: np.random.Generator, p: np.ndarray, size) -> np.ndarray:
    """Inverse-CDF draws from ``p`` returned as 1-based symbols."""
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return (np.searchsorted(cdf, rng.random(size), side="right") + 1).astype(SYMBOL_DTYPE)


def generate_unlabeled(spec: SourceSpec, m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``m x n`` database of i.i.d. stationary Markov rows."""
    fresh = _sample_symbols(rng, spec.pi, (m, n))
    if spec.gamma == 0:
        return fresh
    # With P = gamma*I + (1-gamma)*U, each step keeps the symbol w.p. gamma
    # and otherwise redraws from u.
    keep = rng.random((m, n)) < spec.gamma
    out = fresh
    for j in range(1, n):
        out[:, j] = np.where(keep[:, j], out[:, j - 1], out[:, j])
    return out


def generate_repetition(rep: RepetitionSpec, m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``m x n`` repeat counts; rows inside a block share one pattern."""
    w = rep.block_rows(m)
    blocks = -(-m // w)
    cdf = np.cumsum(rep.ps)
    cdf[-1] = 1.0
    patterns = np.searchsorted(cdf, rng.random((blocks, n)), side="right").astype(np.int64)
    return np.repeat(patterns, w, axis=0)[:m]


def generate_partial_info(s_matrix: np.ndarray, rep: RepetitionSpec, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Reveal each deleted block-column cell independently with probability ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise SpecError(f"alpha must lie in [0, 1], got {alpha}")
    m, n = s_matrix.shape
    w = rep.block_rows(m)
    blocks = -(-m // w)
    reveal = rng.random((blocks, n)) < alpha
    first_rows = s_matrix[::w][:blocks]
    cell = reveal & (first_rows == 0)
    return np.repeat(cell, w, axis=0)[:m].astype(np.int8)


def _noisy_copy(symbols: np.ndarray, noise: NoiseChannel, rng: np.random.Generator) -> np.ndarray:
    if noise.is_identity:
        return symbols.astype(SYMBOL_DTYPE)
    cdf = np.cumsum(noise.matrix, axis=1)
    cdf[:, -1] = 1.0
    rows = cdf[symbols.astype(np.int64) - 1]
    u = rng.random(len(symbols))
    return ((u[:, None] >= rows).sum(axis=1) + 1).astype(SYMBOL_DTYPE)


def _repeat_rows(x: np.ndarray, s: np.ndarray, noise: NoiseChannel, rng: np.random.Generator) -> RaggedDatabase:
    flat = np.repeat(x.ravel(), s.ravel())
    offsets = np.concatenate([[0], np.cumsum(s.sum(axis=1), dtype=np.int64)])
    return RaggedDatabase(_noisy_copy(flat, noise, rng), offsets)


def apply_channel(d1: np.ndarray, truth: GroundTruth, noise: NoiseChannel, rng: np.random.Generator) -> RaggedDatabase:
    """Observed database: row ``theta[i]`` holds the noisy repeats of D1 row ``i``."""
    placed = np.empty_like(d1)
    placed[truth.theta] = d1
    return _repeat_rows(placed, truth.s_matrix, noise, rng)


def generate_instance(
    source: SourceSpec,
    repetition: RepetitionSpec,
    noise: NoiseChannel,
    m: int,
    n: int,
    rng: np.random.Generator,
    alpha: float = 0.0,
    n_seeds: int = 0,
) -> ProblemInstance:
    """Draw a full instance; seeds are ``n_seeds`` extra rows beyond the ``m``."""
    if noise.alphabet_size != source.alphabet_size:
        raise SpecError("noise channel and source disagree on the alphabet size")
    d1 = generate_unlabeled(source, m, n, rng)
    s_all = generate_repetition(repetition, m + n_seeds, n, rng)
    s_matrix, s_seed = s_all[:m], s_all[m:]
    a_matrix = generate_partial_info(s_matrix, repetition, alpha, rng)
    theta = rng.permutation(m)  # numpy's Fisher-Yates shuffle
    truth = GroundTruth(theta, s_matrix, a_matrix, alpha)
    d2 = apply_channel(d1, truth, noise, rng)
    seeds = None
    if n_seeds > 0:
        g1 = generate_unlabeled(source, n_seeds, n, rng)
        seeds = SeedPair(g1, _repeat_rows(g1, s_seed, noise, rng))
    return ProblemInstance(d1, d2, truth, source, noise, repetition, seeds)


# -- JSON container -------------------------------------------------------

def instance_to_dict(inst: ProblemInstance) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "spec": {
            "source": inst.source.to_dict(),
            "noise": inst.noise.to_list(),
            "repetition": inst.repetition.to_dict(),
            "alpha": inst.truth.alpha,
        },
        "d1": inst.d1.tolist(),
        "d2": [r.tolist() for r in inst.d2.rows()],
        "theta": inst.truth.theta.tolist(),
        "s": inst.truth.s_matrix.tolist(),
        "a": inst.truth.a_matrix.tolist(),
        "seeds": None,
    }
    if inst.seeds is not None:
        doc["seeds"] = {"g1": inst.seeds.g1.tolist(), "g2": [r.tolist() for r in inst.seeds.g2.rows()]}
    return doc


def instance_from_dict(doc: dict) -> ProblemInstance:
    if doc.get("version") != FORMAT_VERSION:
        raise SpecError(f"unsupported instance format version {doc.get('version')!r}")
    spec = doc["spec"]
    source = SourceSpec(**spec["source"])
    noise = NoiseChannel(np.array(spec["noise"]))
    rep = RepetitionSpec(**spec["repetition"])
    n = len(doc["d1"][0]) if doc["d1"] else 0
    d1 = np.array(doc["d1"], dtype=SYMBOL_DTYPE).reshape(-1, n)
    m = d1.shape[0]
    truth = GroundTruth(
        np.array(doc["theta"], dtype=np.int64),
        np.array(doc["s"], dtype=np.int64).reshape(m, n),
        np.array(doc["a"], dtype=np.int8).reshape(m, n),
        float(spec.get("alpha", 0.0)),
    )
    seeds = None
    if doc.get("seeds"):
        g1 = np.array(doc["seeds"]["g1"], dtype=SYMBOL_DTYPE).reshape(-1, n)
        seeds = SeedPair(g1, RaggedDatabase.from_rows(doc["seeds"]["g2"]))
    return ProblemInstance(d1, RaggedDatabase.from_rows(doc["d2"]), truth, source, noise, rep, seeds)


def save_instance(inst: ProblemInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(inst), fh, separators=(",", ":"))
        fh.write("\n")


def load_instance(path) -> ProblemInstance:
    with open(path, encoding="utf-8") as fh:
        return instance_from_dict(json.load(fh))
