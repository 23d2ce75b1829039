"""Command-line entry point.

Subcommands: gen, detect, match, bounds, experiment, figures.  Exit status
is 0 on success, 1 on I/O failures and 2 on invalid arguments or configs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .bounds import (
    adversarial_capacity,
    exact_upper_bound_n,
    identical_capacity_iid,
    independent_lower_bound,
    noiseless_identical_capacity,
    seedless_bounds,
)
from .detect import choose_sigma, combine_estimates, detect_deletions_seeded, detect_replicas, detect_repetitions_histogram
from .errors import ArtifactError
from .harness import (
    ExperimentConfig,
    make_noise,
    reproduce_figure_adversarial,
    reproduce_figure_entryrates,
    run_experiment,
    stderr_progress,
    write_text,
)
from .match import (
    TypicalityParams,
    match_adversarial,
    match_identical,
    match_independent,
    match_noiseless,
    match_seedless,
)
from .source import RepetitionSpec, SourceSpec, child_rng, generate_instance, load_instance, save_instance

DEFAULT_SEED = 20240611
DEFAULT_DELTA_GRID = [round(0.05 * i, 10) for i in range(21)]


def _read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_gen(args) -> int:
    cfg = _read_json(args.config)
    source = SourceSpec(**cfg["source"])
    repetition = RepetitionSpec(**{**cfg["repetition"], "ps": tuple(cfg["repetition"]["ps"])})
    noise = make_noise(cfg.get("noise", {"preset": "identity"}), source.alphabet_size)
    inst = generate_instance(source, repetition, noise, int(cfg["m"]), int(cfg["n"]), child_rng(args.seed),
                             alpha=float(cfg.get("alpha", 0.0)), n_seeds=int(cfg.get("lambda", 0)))
    save_instance(inst, args.out)
    return 0


def cmd_detect(args) -> int:
    inst = load_instance(args.instance)
    doc = {"runs": None, "s_hat": None, "deletion_estimate": None, "constants": None}
    if inst.seeds is None and inst.noise.is_identity:
        s_hat = detect_repetitions_histogram(inst.d1, inst.d2, collapsed=not args.full_histograms).s_hat
        doc["s_hat"] = s_hat.tolist()
        doc["deletion_estimate"] = (s_hat == 0).astype(int).tolist()
        doc["runs"] = [int(s) for s in s_hat if s > 0]
    else:
        constants = choose_sigma(inst.source, inst.noise, args.threshold_rule)
        runs = detect_replicas(inst.d2, constants.tau)
        doc["constants"] = constants.to_dict()
        doc["runs"] = list(runs.run_lengths)
        if inst.seeds is not None:
            deleted = detect_deletions_seeded(inst.seeds, runs, constants)
            doc["deletion_estimate"] = deleted.tolist()
            est = combine_estimates(runs, deleted)
            doc["s_hat"] = None if est is None else est.s_hat.tolist()
    _emit(doc)
    return 0


def cmd_match(args) -> int:
    inst = load_instance(args.instance)
    params = TypicalityParams(args.epsilon, args.test)
    if args.scheme == "identical":
        out = match_identical(inst, choose_sigma(inst.source, inst.noise, args.threshold_rule), params,
                              deletion_rule=args.deletion_rule)
    elif args.scheme == "noiseless":
        out = match_noiseless(inst.d1, inst.d2, alphabet_size=inst.source.alphabet_size)
    elif args.scheme == "adversarial":
        out = match_adversarial(inst.d1, inst.d2, alphabet_size=inst.source.alphabet_size)
    elif args.scheme == "independent":
        out = match_independent(inst.d1, inst.d2, inst.truth.a_matrix, inst.source, inst.noise,
                                inst.repetition.ps, params)
    else:
        out = match_seedless(inst, choose_sigma(inst.source, inst.noise, args.threshold_rule), params)
    _emit({"outcome": out.to_dict(), "summary": out.summary(inst.truth)})
    return 0


def bounds_table(params: dict) -> dict:
    """All applicable bounds for an i.i.d. source described by ``params``."""
    source = SourceSpec(**params["source"])
    px = source.pi
    ps = tuple(params.get("ps", (0.0, 1.0)))
    noise = make_noise(params.get("noise", {"preset": "identity"}), source.alphabet_size)
    alpha = float(params.get("alpha", 0.0))
    n = int(params.get("n", 2))
    delta = ps[0]
    lower, upper = seedless_bounds(px, ps, noise)
    table = {
        "identical_capacity": identical_capacity_iid(px, ps, noise).value,
        "independent_lower": independent_lower_bound(px, ps, noise, alpha).value,
        f"independent_upper_n{n}": exact_upper_bound_n(px, ps, noise, alpha, n),
        "seedless_lower": lower.value,
        "seedless_upper": upper.value,
        "adversarial_capacity": adversarial_capacity(px, delta).value,
    }
    if noise.is_identity and len(ps) == 2:
        table["noiseless_identical_capacity"] = noiseless_identical_capacity(source, delta).value
    return table


def cmd_bounds(args) -> int:
    _emit(bounds_table(_read_json(args.params)))
    return 0


def cmd_experiment(args) -> int:
    config = ExperimentConfig.load(args.config)
    result = run_experiment(config, workers=args.workers, progress=None if args.quiet else stderr_progress)
    path = write_text(Path(args.out) / f"{Path(args.config).stem}.csv", result.to_csv())
    print(path)
    return 0


def cmd_figures(args) -> int:
    grid = args.deltas or DEFAULT_DELTA_GRID
    if args.figure == "entryrates":
        text = reproduce_figure_entryrates(grid, args.n_max)
    else:
        text = reproduce_figure_adversarial(grid)
    print(write_text(Path(args.out) / f"{args.figure}.csv", text))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a problem instance")
    p.add_argument("--config", required=True, help="JSON with source, repetition, noise, alpha, m, n, lambda")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master seed (default: %(default)s)")
    p.add_argument("--out", required=True, help="output instance JSON")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("detect", help="infer the repetition pattern of an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--threshold-rule", choices=("midpoint", "balanced"), default="midpoint")
    p.add_argument("--full-histograms", action="store_true", help="compare full symbol counts, not collapsed ones")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("match", help="run a matching scheme on an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--scheme", choices=("identical", "noiseless", "independent", "adversarial", "seedless"),
                   default="identical")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--test", choices=("likelihood", "robust", "exact"), default="likelihood")
    p.add_argument("--threshold-rule", choices=("midpoint", "balanced"), default="midpoint")
    p.add_argument("--deletion-rule", choices=("threshold", "aligned"), default="threshold")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("bounds", help="evaluate capacity bounds")
    p.add_argument("--params", required=True, help="JSON with source, ps, noise, alpha, n")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("experiment", help="run a Monte Carlo sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--quiet", action="store_true", help="no progress on standard error")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("figures", help="write figure data as CSV")
    p.add_argument("figure", choices=("entryrates", "adversarial"))
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--deltas", type=float, nargs="+", help="deletion probabilities (default: 0, 0.05, ..., 1)")
    p.add_argument("--n-max", type=int, default=8, help="columns for the exact upper bound (entryrates)")
    p.set_defaults(func=cmd_figures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ArtifactError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
