"""Monte Carlo experiments, figure data and CSV output.

Every trial draws its randomness from ``child_rng(master_seed, grid_index,
trial_index)``, so results do not depend on the number of worker processes.
Aggregation is exact integer counting followed by one division.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.stats import binomtest

from . import __version__
from .bounds import (
    adversarial_capacity,
    binary_noisy_n2_upper,
    collision_probability,
    exact_upper_bound_n,
    histogram_collision_asymptote,
    histogram_collision_exact,
    identical_capacity_iid,
    independent_lower_bound,
    kl_bernoulli,
)
from .detect import (
    choose_sigma,
    column_histograms,
    full_column_histograms,
    detect_deletions_seeded,
    detect_replicas,
    replica_error_bound,
    seeded_error_bound,
    true_runs,
)
from .errors import ArtifactError, InstanceTooLarge, SpecError
from .match import (
    MatchOutcome,
    Status,
    TypicalityParams,
    adversary_delete,
    match_adversarial,
    match_identical,
    match_independent,
    match_noiseless,
    match_seedless,
)
from .source import (
    GroundTruth,
    NoiseChannel,
    RepetitionSpec,
    SourceSpec,
    apply_channel,
    child_rng,
    generate_instance,
    generate_unlabeled,
)

SCHEMES = ("identical", "noiseless", "independent", "adversarial", "seedless")
SWEEP_PARAMETERS = ("n", "delta", "rate", "m", "epsilon", "lambda", "alpha", "noise_q")
DEFAULT_MATERIALIZE_CAP = 2**14


def format_number(x) -> str:
    """Nine significant digits, locale-free."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".9g")


def wilson_interval(successes: int, total: int) -> tuple[float, float]:
    if total == 0:
        return 0.0, 1.0
    ci = binomtest(int(successes), int(total)).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def make_noise(spec, alphabet_size: int) -> NoiseChannel:
    """Channel from a preset dict (``{"preset": "bsc", "q": 0.05}``) or a matrix."""
    if isinstance(spec, NoiseChannel):
        return spec
    if isinstance(spec, dict):
        preset = spec.get("preset", "identity")
        if preset == "identity":
            return NoiseChannel.identity(alphabet_size)
        if preset == "bsc":
            if alphabet_size != 2:
                raise SpecError("the bsc preset needs a binary alphabet")
            return NoiseChannel.bsc(float(spec["q"]))
        if preset == "symmetric":
            return NoiseChannel.symmetric(alphabet_size, float(spec["q"]))
        raise SpecError(f"unknown noise preset {preset!r}")
    return NoiseChannel(np.asarray(spec, dtype=float))


def with_deletion(ps, delta: float) -> tuple:
    """``ps`` with ``p_S(0) = delta`` and the remaining mass rescaled."""
    ps = np.asarray(ps, dtype=float)
    rest = ps[1:]
    rest = rest / rest.sum() if rest.sum() > 0 else np.eye(len(rest))[0]
    return tuple([float(delta)] + list((1 - delta) * rest))


def rows_from_rate(n: int, rate: float) -> int:
    return max(2, int(round(2 ** (n * rate))))


@dataclass(frozen=True)
class ExperimentConfig:
    source: dict
    repetition: dict
    scheme: str
    n_values: tuple
    trials: int
    noise: object = field(default_factory=lambda: {"preset": "identity"})
    alpha: float = 0.0
    rate: float | None = None
    m: int | None = None
    seeds: object = 0  # count, or {"c_log": c} for ceil(c log2 n)
    epsilon: float = 0.1
    master_seed: int = 0
    sweep: dict | None = None
    thresholds: dict | None = None
    deletion_rule: str = "threshold"
    rows_per_trial: int | None = None
    materialize_cap: int = DEFAULT_MATERIALIZE_CAP
    adversary: str = "greedy"
    test: str = "likelihood"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise SpecError(f"scheme must be one of {SCHEMES}")
        if (self.rate is None) == (self.m is None):
            raise SpecError("give exactly one of rate and m")
        if self.trials < 1:
            raise SpecError("trials must be >= 1")
        if not self.n_values:
            raise SpecError("n_values must be nonempty")
        if self.sweep is not None:
            if self.sweep.get("parameter") not in SWEEP_PARAMETERS:
                raise SpecError(f"sweep parameter must be one of {SWEEP_PARAMETERS}")
            if not self.sweep.get("values"):
                raise SpecError("sweep grid must be nonempty")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["seeds"] = doc.pop("lambda")
        doc["n_values"] = tuple(doc["n_values"])
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["n_values"] = list(self.n_values)
        return doc

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def grid(self) -> list["GridPoint"]:
        values = self.sweep["values"] if self.sweep else [None]
        name = self.sweep["parameter"] if self.sweep else None
        points = []
        for n in self.n_values:
            for v in values:
                points.append(self._point(int(n), name, v))
        return points

    def _point(self, n: int, name, value) -> "GridPoint":
        cfg = self
        if name == "n":
            n = int(value)
        elif name == "delta":
            cfg = replace(cfg, repetition={**cfg.repetition, "ps": with_deletion(cfg.repetition["ps"], value)})
        elif name == "rate":
            cfg = replace(cfg, rate=float(value), m=None)
        elif name == "m":
            cfg = replace(cfg, m=int(value), rate=None)
        elif name == "epsilon":
            cfg = replace(cfg, epsilon=float(value))
        elif name == "lambda":
            cfg = replace(cfg, seeds=int(value))
        elif name == "alpha":
            cfg = replace(cfg, alpha=float(value))
        elif name == "noise_q":
            cfg = replace(cfg, noise={**cfg.noise, "q": float(value)})
        source = SourceSpec(**cfg.source)
        repetition = RepetitionSpec(**{**cfg.repetition, "ps": tuple(cfg.repetition["ps"])})
        m = cfg.m if cfg.m is not None else rows_from_rate(n, cfg.rate)
        seeds = cfg.seeds
        lam = math.ceil(seeds["c_log"] * math.log2(n)) if isinstance(seeds, dict) else int(seeds)
        return GridPoint(n=n, m=m, lam=lam, source=source, repetition=repetition,
                         noise=make_noise(cfg.noise, source.alphabet_size), alpha=cfg.alpha,
                         epsilon=cfg.epsilon, sweep_value=value)


@dataclass(frozen=True)
class GridPoint:
    n: int
    m: int
    lam: int
    source: SourceSpec
    repetition: RepetitionSpec
    noise: NoiseChannel
    alpha: float
    epsilon: float
    sweep_value: object = None


@dataclass(frozen=True)
class TrialRecord:
    rows: int
    errors: int
    collisions: int
    nomatch: int
    detection_failed: bool
    runtime: float


@dataclass
class PointResult:
    point: GridPoint
    trials: int
    rows: int
    errors: int
    collisions: int
    nomatch: int
    detection_failures: int
    runtime: float

    @property
    def error_rate(self) -> float:
        return self.errors / self.rows if self.rows else 0.0

    @property
    def ci(self) -> tuple[float, float]:
        return wilson_interval(self.errors, self.rows)

    @property
    def detection_failure_rate(self) -> float:
        return self.detection_failures / self.trials

    @property
    def collision_rate(self) -> float:
        return self.collisions / self.rows if self.rows else 0.0


@dataclass
class SweepResult:
    config: ExperimentConfig
    points: list

    def to_csv(self) -> str:
        name = self.config.sweep["parameter"] if self.config.sweep else "sweep"
        header = ["grid_index", "n", "m", "lambda", name, "trials", "rows", "error_rate", "ci_low", "ci_high",
                  "detection_failure_rate", "collision_rate", "nomatch_rate"]
        lines = [",".join(header)]
        for i, r in enumerate(self.points):
            lo, hi = r.ci
            value = "" if r.point.sweep_value is None else format_number(r.point.sweep_value)
            cells = [i, r.point.n, r.point.m, r.point.lam, value, r.trials, r.rows, r.error_rate, lo, hi,
                     r.detection_failure_rate, r.collision_rate, r.nomatch / r.rows if r.rows else 0.0]
            lines.append(",".join(c if isinstance(c, str) else format_number(c) for c in cells))
        return csv_with_footer(lines, self.config.config_hash())


def csv_with_footer(lines: list[str], config_hash: str) -> str:
    lines = list(lines) + [f"# config_hash={config_hash} version={__version__}"]
    return "\n".join(lines) + "\n"


# -- trials ---------------------------------------------------------------

def _record(outcome: MatchOutcome, truth: GroundTruth, started: float) -> TrialRecord:
    return TrialRecord(
        rows=len(outcome.rows),
        errors=outcome.error_count(truth),
        collisions=outcome.count(Status.COLLISION),
        nomatch=outcome.count(Status.NO_MATCH),
        detection_failed=outcome.count(Status.DETECTION_FAILED) > 0,
        runtime=time.perf_counter() - started,
    )


def _target_rows(m: int, rows_per_trial: int | None, rng: np.random.Generator):
    if rows_per_trial is None or rows_per_trial >= m:
        return None
    return np.sort(rng.choice(m, size=rows_per_trial, replace=False))


def _constants(config: ExperimentConfig, p: GridPoint):
    th = config.thresholds or {}
    c = choose_sigma(p.source, p.noise, th.get("rule", "midpoint"))
    if "tau" in th or "tau_bar" in th:
        c = replace(c, tau=th.get("tau", c.tau), tau_bar=th.get("tau_bar", c.tau_bar))
    return c


def run_trial(config: ExperimentConfig, p: GridPoint, rng: np.random.Generator) -> TrialRecord:
    started = time.perf_counter()
    params = TypicalityParams(p.epsilon, config.test)
    rows_rng = np.random.default_rng(rng.integers(2**63))
    if config.scheme == "adversarial":
        return _adversarial_trial(config, p, rng, started)
    m_mat = min(p.m, config.materialize_cap) if config.scheme == "identical" else p.m
    lam = p.lam if config.scheme == "identical" else 0
    inst = generate_instance(p.source, p.repetition, p.noise, m_mat, p.n, rng, alpha=p.alpha, n_seeds=lam)
    rows = _target_rows(m_mat, config.rows_per_trial, rows_rng)
    n_rows = m_mat if rows is None else len(rows)
    try:
        if config.scheme == "identical":
            out = match_identical(inst, _constants(config, p), params, rows=rows, deletion_rule=config.deletion_rule,
                                  virtual_rows=p.m - m_mat, rng=rows_rng)
        elif config.scheme == "noiseless":
            out = match_noiseless(inst.d1, inst.d2, alphabet_size=p.source.alphabet_size, rows=rows)
        elif config.scheme == "independent":
            out = match_independent(inst.d1, inst.d2, inst.truth.a_matrix, p.source, p.noise, p.repetition.ps,
                                    params, rows=rows)
        else:
            out = match_seedless(inst, _constants(config, p), params, rows=rows)
    except ArtifactError:
        return TrialRecord(n_rows, n_rows, 0, 0, True, time.perf_counter() - started)
    return _record(out, inst.truth, started)


def _adversarial_trial(config: ExperimentConfig, p: GridPoint, rng: np.random.Generator, started: float) -> TrialRecord:
    """One uniformly chosen target row against an adversary who knows it."""
    d1 = generate_unlabeled(p.source, p.m, p.n, rng)
    target = int(rng.integers(p.m))
    deleted = adversary_delete(d1, p.repetition.delta(), config.adversary, rng, target=target)
    pattern = np.ones(p.n, dtype=np.int64)
    pattern[deleted] = 0
    theta = rng.permutation(p.m)
    truth = GroundTruth(theta, np.tile(pattern, (p.m, 1)), np.zeros((p.m, p.n), dtype=np.int8))
    d2 = apply_channel(d1, truth, NoiseChannel.identity(p.source.alphabet_size), rng)
    out = match_adversarial(d1, d2, alphabet_size=p.source.alphabet_size, rows=[theta[target]])
    return _record(out, truth, started)


def _run_chunk(args) -> list[TrialRecord]:
    config, points, tasks = args
    return [run_trial(config, points[g], child_rng(config.master_seed, g, t)) for g, t in tasks]


def run_experiment(config: ExperimentConfig, workers: int = 1, progress=None) -> SweepResult:
    points = config.grid()
    tasks = [(g, t) for g in range(len(points)) for t in range(config.trials)]
    if workers <= 1:
        records = []
        for k, task in enumerate(tasks):
            records.extend(_run_chunk((config, points, [task])))
            if progress:
                progress(k + 1, len(tasks))
    else:
        chunks = [tasks[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [(config, points, c) for c in chunks]))
        by_task = {}
        for chunk, part in zip(chunks, parts):
            by_task.update(zip(chunk, part))
        records = [by_task[task] for task in tasks]
    results = []
    for g, point in enumerate(points):
        recs = records[g * config.trials:(g + 1) * config.trials]
        results.append(PointResult(
            point=point,
            trials=len(recs),
            rows=sum(r.rows for r in recs),
            errors=sum(r.errors for r in recs),
            collisions=sum(r.collisions for r in recs),
            nomatch=sum(r.nomatch for r in recs),
            detection_failures=sum(r.detection_failed for r in recs),
            runtime=sum(r.runtime for r in recs) / len(recs),
        ))
    return SweepResult(config, results)


def stderr_progress(done: int, total: int) -> None:
    if done == total or done % max(1, total // 20) == 0:
        print(f"\r{done}/{total} trials", end="\n" if done == total else "", file=sys.stderr, flush=True)


# -- figure data ----------------------------------------------------------

ENTRYRATES_FLIP = 0.05
ENTRYRATES_ALPHA = 0.7
ENTRYRATES_N = 8


def entryrates_rows(delta_grid, n_max: int = ENTRYRATES_N, flip: float = ENTRYRATES_FLIP,
                    alpha: float = ENTRYRATES_ALPHA) -> list[dict]:
    """Bounds for a binary uniform source, deletion-only repetition and a BSC."""
    noise = NoiseChannel.bsc(flip)
    px = np.array([0.5, 0.5])
    rows = []
    for delta in delta_grid:
        delta = float(delta)
        ps = (delta, 1 - delta)
        if delta >= 1.0:
            rows.append({"delta": delta, "achievable": 0.0, "upper_n_max": 0.0, "upper_n2": 0.0, "loose_upper": 0.0})
            continue
        rows.append({
            "delta": delta,
            "achievable": independent_lower_bound(px, ps, noise, alpha).value,
            "upper_n_max": exact_upper_bound_n(px, ps, noise, alpha, n_max),
            "upper_n2": binary_noisy_n2_upper(0.5, noise, delta, alpha).value,
            "loose_upper": identical_capacity_iid(px, ps, noise).value,
        })
    return rows


def adversarial_rows(delta_grid, alphabet_size: int = 5) -> list[dict]:
    px = np.full(alphabet_size, 1.0 / alphabet_size)
    h = math.log2(alphabet_size)
    return [{"delta": float(d), "adversarial": adversarial_capacity(px, float(d)).value,
             "noiseless_capacity": (1 - float(d)) * h} for d in delta_grid]


def rows_to_csv(rows: list[dict], tag: str) -> str:
    header = list(rows[0].keys())
    lines = [",".join(header)] + [",".join(format_number(r[k]) for k in header) for r in rows]
    return csv_with_footer(lines, hashlib.sha256(tag.encode()).hexdigest()[:16])


def reproduce_figure_entryrates(delta_grid, n_max: int = ENTRYRATES_N) -> str:
    grid = [float(d) for d in delta_grid]
    return rows_to_csv(entryrates_rows(grid, n_max), f"entryrates:{grid}:{n_max}")


def reproduce_figure_adversarial(delta_grid) -> str:
    grid = [float(d) for d in delta_grid]
    return rows_to_csv(adversarial_rows(grid), f"adversarial:{grid}")


def adversarial_threshold(px, rate: float) -> float:
    """``delta*`` solving ``D(delta* || 1 - q_hat) = rate``."""
    target = 1 - collision_probability(px)
    return brentq(lambda d: kl_bernoulli(d, target) - rate, 0.0, target)


# -- detection and histogram scaling --------------------------------------

@dataclass(frozen=True)
class ScalingRow:
    value: int
    trials: int
    failures: int
    bound: float

    @property
    def error_rate(self) -> float:
        return self.failures / self.trials

    @property
    def sigma(self) -> float:
        p = self.error_rate
        return math.sqrt(p * (1 - p) / self.trials)


def run_detection_scaling(kind: str, values, source: SourceSpec, noise: NoiseChannel, repetition: RepetitionSpec,
                          n: int, trials: int, master_seed: int = 0, m: int = 1, threshold_rule: str = "midpoint") -> list[ScalingRow]:
    """Empirical detection error versus ``m`` (``kind="replica"``) or seed count (``kind="seeded"``).

    Seeded detection is given the true run structure so that only the
    deletion step is measured.  Zero seeds count as a failure in every trial.
    """
    constants = choose_sigma(source, noise, threshold_rule)
    expected_k = n * repetition.mean()
    rows = []
    for g, value in enumerate(values):
        value = int(value)
        failures = 0
        for t in range(trials):
            rng = child_rng(master_seed, g, t)
            if kind == "replica":
                inst = generate_instance(source, repetition, noise, value, n, rng)
                ok = detect_replicas(inst.d2, constants.tau) == true_runs(inst.truth.s_matrix[0])
            elif kind == "seeded":
                if value == 0:
                    failures += 1
                    continue
                inst = generate_instance(source, repetition, noise, m, n, rng, n_seeds=value)
                pattern = inst.truth.s_matrix[0]
                est = detect_deletions_seeded(inst.seeds, true_runs(pattern), constants)
                ok = np.array_equal(est, (pattern == 0).astype(np.int8))
            else:
                raise ValueError(f"unknown detection kind {kind!r}")
            failures += not ok
        if kind == "replica":
            bound = replica_error_bound(constants, value, expected_k)
        else:
            bound = seeded_error_bound(constants, value, n) if value > 0 else 1.0
        rows.append(ScalingRow(value, trials, failures, bound))
    return rows


def detection_scaling_csv(rows: list[ScalingRow], kind: str) -> str:
    name = "m" if kind == "replica" else "lambda"
    lines = [f"{name},trials,error_rate,sigma,chernoff_bound"]
    for r in rows:
        lines.append(",".join(format_number(v) for v in (r.value, r.trials, r.error_rate, r.sigma, min(r.bound, 1.0))))
    return csv_with_footer(lines, hashlib.sha256(f"{kind}:{[r.value for r in rows]}".encode()).hexdigest()[:16])


def sample_column_histograms(source: SourceSpec, m: int, n: int, trials: int, rng: np.random.Generator,
                             collapsed: bool = False) -> np.ndarray:
    """Column histograms of ``trials`` independent ``m x n`` databases.

    Returns a ``trials x n x h`` array: ``h = 1`` holds the collapsed count,
    otherwise ``h`` is the alphabet size.  For an i.i.d. source histograms
    are drawn directly from their binomial or multinomial law; Markov
    sources are simulated in full.
    """
    if source.gamma == 0:
        if collapsed:
            return rng.binomial(m, 1 - source.pi[0], size=(trials, n))[..., None]
        return rng.multinomial(m, source.pi, size=(trials, n))
    out = []
    for _ in range(trials):
        d = generate_unlabeled(source, m, n, rng)
        out.append(column_histograms(d)[:, None] if collapsed else full_column_histograms(d, source.alphabet_size))
    return np.stack(out)


def has_duplicates(histograms: np.ndarray) -> np.ndarray:
    """Per trial, whether two columns share a histogram."""
    h = np.asarray(histograms)
    if h.ndim == 2:
        h = h[..., None]
    n = h.shape[1]
    same = (h[:, :, None, :] == h[:, None, :, :]).all(axis=-1)
    return same[:, ~np.eye(n, dtype=bool)].any(axis=1)


@dataclass(frozen=True)
class HistogramRow:
    n: int
    m: int
    trials: int
    duplicates: int
    pair_exact: float
    union_bound: float
    asymptote: float

    @property
    def frequency(self) -> float:
        return self.duplicates / self.trials


def run_histogram_scaling(pairs, alphabet_size: int, trials: int, master_seed: int = 0,
                          collapsed: bool = False) -> list[HistogramRow]:
    """Duplicate-histogram frequency for a uniform source over ``(n, m)`` pairs.

    ``pair_exact`` is the exact probability that two columns share a
    histogram (NaN when the enumeration is too large), ``union_bound`` is
    ``C(n, 2)`` times it and ``asymptote`` is the large-``m`` approximation.
    """
    source = SourceSpec.uniform(alphabet_size)
    law = [source.pi[0], 1 - source.pi[0]] if collapsed else source.pi
    rows = []
    for g, (n, m) in enumerate(pairs):
        n, m = int(n), int(m)
        hist = sample_column_histograms(source, m, n, trials, child_rng(master_seed, g), collapsed)
        dup = int(has_duplicates(hist).sum())
        try:
            pair = histogram_collision_exact(m, law)
        except InstanceTooLarge:
            pair = float("nan")
        asym = histogram_collision_asymptote(n, m, alphabet_size) if not collapsed or alphabet_size == 2 else float("nan")
        rows.append(HistogramRow(n, m, trials, dup, pair, n * (n - 1) / 2 * pair, asym))
    return rows


def histogram_scaling_csv(rows: list[HistogramRow]) -> str:
    lines = ["n,m,trials,duplicate_frequency,ci_low,ci_high,pair_exact,union_bound,asymptote"]
    for r in rows:
        lo, hi = wilson_interval(r.duplicates, r.trials)
        lines.append(",".join(format_number(v) for v in (r.n, r.m, r.trials, r.frequency, lo, hi, r.pair_exact,
                                                         r.union_bound, r.asymptote)))
    return csv_with_footer(lines, hashlib.sha256(f"hist:{[(r.n, r.m) for r in rows]}".encode()).hexdigest()[:16])


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path
