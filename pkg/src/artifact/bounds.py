"""Capacity bounds and the exact enumerators used to check them.

All quantities are in bits.  Closed forms are evaluated directly; the
``exact_*`` functions build the full joint law of the observation by
enumeration and serve as oracles for the closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, InstanceTooLarge, NonUniformAsymptote, SMaxTooLarge
from .source import NoiseChannel, SourceSpec, transition_power

ENUMERATION_BUDGET = 50_000_000
EXACT_BINOMIAL_MAX = 20_000


@dataclass
class BoundReport:
    name: str
    value: float
    params: dict = field(default_factory=dict)
    valid: bool = True
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "valid": self.valid,
            "params": self.params,
            "diagnostics": self.diagnostics,
        }


@dataclass(eq=False)
class JointTable:
    """Dense joint pmf; ``labels`` names the axes."""

    probs: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if (self.probs < 0).any() or abs(self.probs.sum() - 1.0) > 1e-12:
            raise DomainError("joint table must be a probability distribution")
        if not self.labels:
            self.labels = tuple(f"a{i}" for i in range(self.probs.ndim))


# -- elementary information measures --------------------------------------

def _plogp(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log2(p[nz])
    return out


def entropy(p) -> float:
    return float(-_plogp(np.asarray(p, dtype=float)).sum())


def binary_entropy(x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"binary entropy argument {x} outside [0, 1]")
    return entropy([x, 1.0 - x])


def kl_bernoulli(p: float, q: float) -> float:
    """``D(p || q)`` between Bernoulli laws, with ``0 log 0 = 0``."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise DomainError("Bernoulli parameters must lie in [0, 1]")
    total = 0.0
    for a, b in ((p, q), (1.0 - p, 1.0 - q)):
        if a == 0:
            continue
        if b == 0:
            raise DomainError(f"D({p}||{q}) is infinite")
        total += a * math.log2(a / b)
    return total


def mutual_information(joint: JointTable | np.ndarray, split: int = 1) -> float:
    """``I(A; B)`` where ``A`` is the first ``split`` axes and ``B`` the rest."""
    probs = joint.probs if isinstance(joint, JointTable) else np.asarray(joint, dtype=float)
    a_size = int(np.prod(probs.shape[:split]))
    flat = probs.reshape(a_size, -1)
    return entropy(flat.sum(axis=1)) + entropy(flat.sum(axis=0)) - entropy(flat)


def conditional_entropy_x_given_y(px: np.ndarray, channel: np.ndarray) -> float:
    """``H(X | Y)`` for input law ``px`` through ``channel[x, y]``."""
    joint = np.asarray(px)[:, None] * channel
    return entropy(joint) - entropy(joint.sum(axis=0))


def channel_mutual_information(px: np.ndarray, channel: np.ndarray) -> float:
    return mutual_information(np.asarray(px)[:, None] * channel)


def collision_probability(px) -> float:
    """``q_hat = sum_x p(x)^2``."""
    px = np.asarray(px, dtype=float)
    return float(np.dot(px, px))


def _as_channel(noise) -> np.ndarray:
    return noise.matrix if isinstance(noise, NoiseChannel) else np.asarray(noise, dtype=float)


def _s_max(ps: Sequence[float]) -> int:
    nz = np.nonzero(np.asarray(ps) > 0)[0]
    return int(nz[-1]) if len(nz) else 0


# -- identical repetition -------------------------------------------------

def entropy_rate(transition: np.ndarray, pi: np.ndarray) -> float:
    return float(sum(pi[i] * entropy(transition[i]) for i in range(len(pi))))


def noiseless_identical_capacity(spec: SourceSpec, delta: float, tol: float = 1e-12, max_terms: int = 10_000) -> BoundReport:
    """Noiseless identical-repetition capacity ``(1-d)^2 sum_r d^r H(P^{r+1})``.

    With ``c_r = 1 - gamma^{r+1}`` and ``eta_{r,i} = (1-u_i) gamma^{r+1} + u_i``
    the entropy rate of ``P^{r+1}`` splits into a part linear in ``c_r``
    (summed in closed form), the diagonal ``eta log eta`` terms and a
    ``(1 - q_hat) c_r log c_r`` term.  The two series are summed until the
    ``delta**r``-weighted term drops below ``tol``.  ``diagnostics`` also
    carries the value obtained without the ``c_r log c_r`` series.
    """
    if not 0.0 <= delta < 1.0:
        raise DomainError(f"delta must lie in [0, 1), got {delta}")
    u = spec.pi
    g = spec.gamma
    q_hat = float(np.dot(u, u))
    head = (1 - delta) * (1 - g) / (1 - g * delta) * (entropy(u) + float(np.dot(u * u, np.log2(u))))
    diag_series = 0.0
    mix_series = 0.0
    terms = 0
    weight = 1.0
    for r in range(max_terms):
        eta = (1 - u) * g ** (r + 1) + u
        c = 1 - g ** (r + 1)
        diag = weight * float(np.dot(u, _plogp(eta)))
        mix = weight * (1 - q_hat) * float(_plogp(np.array(c)))
        diag_series += diag
        mix_series += mix
        terms = r + 1
        if weight < tol or max(abs(diag), abs(mix)) < tol:
            break
        weight *= delta
    value = head - (1 - delta) ** 2 * (diag_series + mix_series)
    return BoundReport(
        "noiseless_identical_capacity",
        value,
        {"gamma": g, "u": list(spec.u), "delta": delta},
        diagnostics={"terms": terms, "without_mixing_term": head - (1 - delta) ** 2 * diag_series},
    )


def replica_block_channel(channel: np.ndarray, s: int) -> np.ndarray:
    """``p(y^s | x)`` as a ``q x q**s`` matrix (row-major over ``y^s``)."""
    q = channel.shape[0]
    block = np.ones((q, 1))
    for _ in range(s):
        block = (block[:, :, None] * channel[:, None, :]).reshape(q, -1)
    return block


def identical_capacity_iid(pX, ps, noise, cap: int = 10**6) -> BoundReport:
    """``I(X; Y^S, S) = H(X) - sum_s p_S(s) H(X | Y^s)``."""
    px = np.asarray(pX, dtype=float)
    w = _as_channel(noise)
    q = len(px)
    s_max = _s_max(ps)
    if q**s_max > cap:
        raise SMaxTooLarge(f"|X|^s_max = {q}^{s_max} exceeds the cap {cap}")
    hx = entropy(px)
    cond = 0.0
    for s, p_s in enumerate(ps):
        if p_s == 0:
            continue
        if s == 0:
            cond += p_s * hx
            continue
        joint = px[:, None] * replica_block_channel(w, s)
        cond += p_s * (entropy(joint) - entropy(joint.sum(axis=0)))
    return BoundReport("identical_capacity_iid", hx - cond, {"pX": px.tolist(), "ps": list(ps)})


# -- exact finite-n enumerations ------------------------------------------

def _x_block_probs(px_or_spec, n: int) -> np.ndarray:
    """Probability of every ``x^n`` (row-major, first symbol most significant)."""
    if isinstance(px_or_spec, SourceSpec):
        pi = px_or_spec.pi
        P = transition_power(px_or_spec, 1)
        probs = pi.copy()
        q = len(pi)
        for _ in range(1, n):
            last = np.tile(np.arange(q), len(probs) // q)
            probs = (probs[:, None] * P[last]).reshape(-1)
        return probs
    px = np.asarray(px_or_spec, dtype=float)
    probs = np.ones(1)
    for _ in range(n):
        probs = np.outer(probs, px).reshape(-1)
    return probs


def _observation_mi(x_probs: np.ndarray, q: int, n: int, states, channel: np.ndarray, budget: int) -> float:
    """Exact ``I(X^n; Y^K, L^n)`` where each column independently takes a state.

    ``states`` lists ``(probability, repeat_count, revealed_label)``.  The
    observation is the concatenated noisy output together with the revealed
    labels; columns sharing a label are indistinguishable to the observer.
    """
    states = [st for st in states if st[0] > 0]
    per_col = sum(q ** s for _, s, _ in states)
    work = q**n * per_col**n
    if work > budget:
        raise InstanceTooLarge(f"enumeration needs {work:.3g} cells, budget is {budget:.3g}")
    blocks = {s: replica_block_channel(channel, s) for _, s, _ in states}
    acc: dict[tuple, np.ndarray] = {}

    def walk(j: int, table: np.ndarray, weight: float, labels: tuple):
        if j == n:
            key = (labels, table.shape[1])
            if key in acc:
                acc[key] += weight * table
            else:
                acc[key] = weight * table
            return
        for p, s, label in states:
            b = blocks[s]
            nxt = (table[:, None, :, None] * b[None, :, None, :]).reshape(table.shape[0] * q, -1)
            walk(j + 1, nxt, weight * p, labels + (label,))

    walk(0, np.ones((1, 1)), 1.0, ())
    h_obs = 0.0
    h_obs_given_x = 0.0
    for table in acc.values():
        h_obs -= float(_plogp(x_probs @ table).sum())
        h_obs_given_x -= float(x_probs @ _plogp(table).sum(axis=1))
    return h_obs - h_obs_given_x


def exact_rate_identical_n(spec: SourceSpec, ps, noise, n: int, budget: int = ENUMERATION_BUDGET) -> float:
    """``(1/n) I(X^n; Y^K, S^n)`` for a Markov source, by enumeration."""
    w = _as_channel(noise)
    q = spec.alphabet_size
    states = [(p, s, s) for s, p in enumerate(ps)]
    return _observation_mi(_x_block_probs(spec, n), q, n, states, w, budget) / n


def exact_upper_bound_n(pX, ps, noise, alpha: float, n: int, budget: int = ENUMERATION_BUDGET) -> float:
    """``(1/n) I(X^n; Y^K, A^n)`` for an i.i.d. source, ``S`` marginalized.

    Each column is revealed as deleted (``A = 1``) with probability
    ``alpha * p_S(0)``; every other outcome shows ``A = 0``.
    """
    px = np.asarray(pX, dtype=float)
    w = _as_channel(noise)
    delta = ps[0]
    states = [(alpha * delta, 0, 1), ((1 - alpha) * delta, 0, 0)]
    states += [(p, s, 0) for s, p in enumerate(ps) if s > 0]
    return _observation_mi(_x_block_probs(px, n), len(px), n, states, w, budget) / n


# -- independent repetition -----------------------------------------------

def noiseless_n2_upper(pX, delta: float, alpha: float) -> BoundReport:
    px = np.asarray(pX, dtype=float)
    qh = collision_probability(px)
    value = (1 - delta) * entropy(px) - (1 - alpha) * delta * (1 - delta) * (1 - qh)
    return BoundReport("noiseless_n2_upper", value, {"pX": px.tolist(), "delta": delta, "alpha": alpha})


def binary_noisy_n2_upper(p: float, noise, delta: float, alpha: float) -> BoundReport:
    """Two-column bound for ``X ~ Bernoulli(p)`` over a binary channel."""
    w = _as_channel(noise)
    # Bernoulli(p) puts mass p on the second symbol.
    px = np.array([1 - p, p])
    ixy = channel_mutual_information(px, w)
    iuv = channel_mutual_information(np.array([0.5, 0.5]), w)
    value = (1 - delta) * ixy - 2 * (1 - alpha) * delta * (1 - delta) * p * (1 - p) * iuv
    return BoundReport("binary_noisy_n2_upper", value, {"p": p, "delta": delta, "alpha": alpha},
                       diagnostics={"I_XY": ixy, "I_UV": iuv})


def independent_lower_bound(pX, ps, noise, alpha: float) -> BoundReport:
    """Achievable rate for independent repetition (valid for any block size)."""
    px = np.asarray(pX, dtype=float)
    w = _as_channel(noise)
    q = len(px)
    delta = ps[0]
    s_max = _s_max(ps)
    mean_s = float(np.dot(np.arange(len(ps)), ps))
    keep = 1 - alpha * delta
    hx = entropy(px)
    hxy = conditional_entropy_x_given_y(px, w)
    ratio = mean_s / (keep * s_max) if s_max > 0 else 0.0
    if ratio > 1 + 1e-12:
        raise DomainError(f"binary entropy argument E[S]/((1-alpha*delta)s_max) = {ratio} exceeds 1")
    hb = binary_entropy(min(ratio, 1.0))
    base = mean_s / s_max * hx - keep * hb - mean_s * hxy if s_max > 0 else 0.0
    tight_ok = s_max > 0 and mean_s / s_max >= keep / q
    tight = None
    if tight_ok:
        log_q1 = math.log2(q - 1) if q > 2 else 0.0
        tight = keep * hx - (keep - mean_s / s_max) * min(hx, log_q1) - keep * hb - mean_s * hxy
    raw = max(base, tight) if tight is not None else base
    return BoundReport(
        "independent_lower_bound",
        max(raw, 0.0),
        {"pX": px.tolist(), "ps": list(ps), "alpha": alpha},
        valid=True,
        diagnostics={"base": base, "tightened": tight, "tightened_applies": tight_ok},
    )


# Both arbitrary-order corollaries reuse the independent-repetition scheme.
arbitrary_order_lower_bound = independent_lower_bound
noisy_arbitrary_order_lower_bound = independent_lower_bound


# -- adversarial and seedless ---------------------------------------------

def adversarial_capacity(pX, delta: float) -> BoundReport:
    qh = collision_probability(pX)
    value = kl_bernoulli(delta, 1 - qh) if delta <= 1 - qh else 0.0
    return BoundReport("adversarial_capacity", value, {"pX": list(map(float, pX)), "delta": delta},
                       diagnostics={"q_hat": qh})


def seedless_bounds(pX, ps, noise) -> tuple[BoundReport, BoundReport]:
    px = np.asarray(pX, dtype=float)
    q = len(px)
    delta = ps[0]
    mi = identical_capacity_iid(px, ps, noise).value
    hb = binary_entropy(delta)
    base = mi - hb
    tight = None
    if delta <= 1 - 1 / q:
        log_q1 = math.log2(q - 1) if q > 2 else 0.0
        tight = mi + delta * max(entropy(px) - log_q1, 0.0) - hb
    raw = max(base, tight) if tight is not None else base
    params = {"pX": px.tolist(), "ps": list(ps)}
    lower = BoundReport("seedless_lower", max(raw, 0.0), params,
                        diagnostics={"base": base, "tightened": tight})
    upper = BoundReport("seedless_upper", mi, params)
    return lower, upper


# -- counting functions ---------------------------------------------------

def _all_strings_column(n: int, q: int, j: int, total: int) -> np.ndarray:
    idx = np.arange(total, dtype=np.int64)
    return (idx // q ** (n - 1 - j)) % q


def _check_enumeration(q: int, n: int, limit: int = 10**7):
    if q**n > limit:
        raise InstanceTooLarge(f"{q}^{n} strings exceed the enumeration limit {limit}")


def count_supersequences(n: int, k: int, q: int, pattern: Sequence[int] | None = None) -> int:
    """Number of length-``n`` ``q``-ary strings containing ``pattern`` as a subsequence.

    Brute force over all ``q**n`` strings with greedy subsequence matching.
    The default pattern is ``0 1 2 ... `` cycled to length ``k``.
    """
    _check_enumeration(q, n)
    pat = np.asarray(pattern if pattern is not None else [i % q for i in range(k)], dtype=np.int64)
    if len(pat) != k:
        raise ValueError("pattern length must equal k")
    total = q**n
    ptr = np.zeros(total, dtype=np.int64)
    padded = np.append(pat, -1)
    for j in range(n):
        col = _all_strings_column(n, q, j, total)
        ptr += col == padded[ptr]
    return int((ptr >= k).sum())


def supersequence_bound(n: int, k: float, q: int, a: int = 0, s_max: int = 1) -> BoundReport:
    """``N 2^{N H_b(K/N)} (q-1)^{N-K}`` with ``N = n - a`` and ``K = k / s_max``."""
    big_n = n - a
    big_k = k / s_max
    value = big_n * 2 ** (big_n * binary_entropy(big_k / big_n)) * (q - 1) ** (big_n - big_k)
    return BoundReport("supersequence_bound", value, {"n": n, "k": k, "q": q, "a": a, "s_max": s_max},
                       valid=big_k / big_n >= 1 / q)


def count_stretched_supersequences(z: Sequence[int], n: int, s_max: int, q: int) -> int:
    """Strings ``x^n`` whose ``s_max``-fold stretch contains ``z`` as a subsequence."""
    _check_enumeration(q, n)
    pat = np.append(np.asarray(z, dtype=np.int64), -1)
    k = len(z)
    total = q**n
    ptr = np.zeros(total, dtype=np.int64)
    for j in range(n):
        col = _all_strings_column(n, q, j, total)
        for _ in range(s_max):
            ptr += col == pat[ptr]
    return int((ptr >= k).sum())


# -- histogram collisions -------------------------------------------------

def _compositions(m: int, parts: int):
    if parts == 1:
        yield (m,)
        return
    for first in range(m + 1):
        for rest in _compositions(m - first, parts - 1):
            yield (first,) + rest


def histogram_collision_exact(m: int, pX, limit: int = 5_000_000) -> float:
    """``Pr(H_1 = H_2)`` for two independent columns of ``m`` i.i.d. symbols."""
    px = np.asarray(pX, dtype=float)
    q = len(px)
    if q == 2:
        if px[0] == px[1]:
            if m <= EXACT_BINOMIAL_MAX:
                # Integer arithmetic keeps full precision where gammaln drifts.
                return math.comb(2 * m, m) / 4**m
            return float(np.exp(gammaln(2 * m + 1) - 2 * gammaln(m + 1) - 2 * m * np.log(2)))
        h = np.arange(m + 1)
        logp = gammaln(m + 1) - gammaln(h + 1) - gammaln(m - h + 1) + h * np.log(px[0]) + (m - h) * np.log(px[1])
        return float(np.exp(2 * logp).sum())
    if math.comb(m + q - 1, q - 1) > limit:
        raise InstanceTooLarge(f"{math.comb(m + q - 1, q - 1)} histograms exceed the limit {limit}")
    comps = np.array(list(_compositions(m, q)), dtype=float)
    logp = gammaln(m + 1) - gammaln(comps + 1).sum(axis=1) + (comps * np.log(px)).sum(axis=1)
    return float(np.exp(2 * logp).sum())


def histogram_collision_asymptote(n: int, m: int, q: int, pX=None) -> float:
    """``n^2 m^{(1-q)/2} C_q`` with ``C_q = (4 pi)^{(1-q)/2} q^{q/2}`` (uniform sources only)."""
    if pX is not None and not np.allclose(pX, 1.0 / q, rtol=0, atol=1e-12):
        raise NonUniformAsymptote("the asymptote is only stated for a uniform source")
    c_q = (4 * math.pi) ** ((1 - q) / 2) * q ** (q / 2)
    return n**2 * m ** ((1 - q) / 2) * c_q

