"""Command-line interface.

Exit codes: 0 on success, 1 on I/O failure, 2 on invalid input.  Failures
print a JSON object ``{"error": ..., "field": ..., "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import ConfigError, ExperimentConfig, build_problem, run_experiment, write_experiment
from .capacity import CapacityError, PredictionMatrix, solve_capacity
from .importance import Dataset, fit_learner, generate_st, vic
from .space import SpaceError, ThresholdSpec, ground_truth_set

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2


class CliError(Exception):
    def __init__(self, code: int, field: str, message: str):
        super().__init__(message)
        self.code, self.field, self.message = code, field, message


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise CliError(EXIT_IO, "out", f"cannot write {path}: {e.strerror or e}") from None


def _load_json(path: str, field: str = "config"):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise CliError(EXIT_IO, field, f"cannot read {path}: {e.strerror or e}") from None
    except json.JSONDecodeError as e:
        raise CliError(EXIT_INVALID, field, f"invalid JSON: {e}") from None


# -- subcommands ------------------------------------------------------------

def cmd_run(args) -> int:
    raw = _load_json(args.config)
    if args.seed is not None and isinstance(raw, dict):
        raw = {**raw, "seeds": [args.seed]}
    try:
        cfg = ExperimentConfig.from_dict(raw)
    except ConfigError as e:
        raise CliError(EXIT_INVALID, e.field, e.message) from None
    except (TypeError, ValueError) as e:
        raise CliError(EXIT_INVALID, "config", str(e)) from None
    result = run_experiment(cfg, jobs=args.jobs)
    try:
        paths = write_experiment(result, args.out)
    except OSError as e:
        raise CliError(EXIT_IO, "out", str(e)) from None
    for p in paths:
        print(p)
    if result.failures:
        first = sorted(result.failures)[0]
        raise CliError(EXIT_IO, "runs", f"{len(result.failures)} run(s) failed; first {first[0]}/{first[1]}: "
                       f"{result.failures[first]}")
    return EXIT_OK


def cmd_capacity(args) -> int:
    try:
        if args.task == "classification" or str(args.predictions).endswith(".json"):
            P = PredictionMatrix.from_json(args.predictions)
            if args.task == "regression" and P.task != "regression":
                P = PredictionMatrix(P.values, "regression")
        else:
            P = PredictionMatrix.from_csv(args.predictions)
        res = solve_capacity(P, tol=args.tol)
    except OSError as e:
        raise CliError(EXIT_IO, "predictions", f"cannot read {args.predictions}: {e.strerror or e}") from None
    except (CapacityError, ValueError) as e:
        raise CliError(EXIT_INVALID, "predictions", str(e)) from None
    report = {**res.to_dict(), "task": P.task, "n_models": P.n_models, "tol": args.tol}
    print(f"value {res.value!r}")
    print("weights " + " ".join(repr(float(w)) for w in res.weights))
    print(f"gap {res.gap!r}")
    print(f"iterations {res.iterations}")
    if args.out:
        _write_text(Path(args.out), _dump(report))
    return EXIT_OK


def cmd_vic(args) -> int:
    spec = _load_json(args.models, "models")
    if isinstance(spec, list):
        spec = {"models": spec}
    if not isinstance(spec, dict) or not isinstance(spec.get("models"), list) or not spec["models"]:
        raise CliError(EXIT_INVALID, "models", "expected a nonempty list of {class, hpc} entries")
    target = spec.get("target", "Y")
    task = spec.get("task", "regression")
    repeats = int(spec.get("repeats", 10))
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    try:
        data = Dataset.from_csv(args.data, target=target, task=task)
    except OSError as e:
        raise CliError(EXIT_IO, "data", f"cannot read {args.data}: {e.strerror or e}") from None
    except ValueError as e:
        raise CliError(EXIT_INVALID, "data", str(e)) from None
    train, test = data.split(seed)
    models = []
    for i, entry in enumerate(spec["models"]):
        try:
            models.append(fit_learner(str(entry["class"]), dict(entry.get("hpc", {})), train))
        except KeyError as e:
            raise CliError(EXIT_INVALID, f"models[{i}]", f"missing key {e}") from None
        except (SpaceError, ValueError) as e:
            raise CliError(EXIT_INVALID, f"models[{i}].hpc", str(e)) from None
    if repeats < 1:
        raise CliError(EXIT_INVALID, "repeats", "must be >= 1")
    cloud = vic(models, test, repeats=repeats, seed=seed)
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        cloud.to_csv(args.out)
    except OSError as e:
        raise CliError(EXIT_IO, "out", f"cannot write {args.out}: {e.strerror or e}") from None
    print(args.out)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.kind != "st":
        raise CliError(EXIT_INVALID, "kind", f"unknown dataset kind {args.kind!r}")
    if args.n < 1:
        raise CliError(EXIT_INVALID, "n", "must be >= 1")
    data = generate_st(args.n, args.seed if args.seed is not None else 0)
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        data.to_csv(args.out)
    except OSError as e:
        raise CliError(EXIT_IO, "out", f"cannot write {args.out}: {e.strerror or e}") from None
    print(args.out)
    return EXIT_OK


def cmd_truth(args) -> int:
    """Ground-truth set from a value column, or from an experiment config's landscape."""
    if (args.values is None) == (args.config is None):
        raise CliError(EXIT_INVALID, "values", "give exactly one of --values or --config")
    if args.config is not None:
        try:
            cfg = ExperimentConfig.from_dict(_load_json(args.config))
        except ConfigError as e:
            raise CliError(EXIT_INVALID, e.field, e.message) from None
        problem = build_problem(cfg)
        values, threshold = problem.landscape.values, cfg.threshold
        if args.candidates:
            try:
                problem.candidates.to_csv(args.candidates)
            except OSError as e:
                raise CliError(EXIT_IO, "candidates", str(e)) from None
    else:
        try:
            with open(args.values, newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
        except OSError as e:
            raise CliError(EXIT_IO, "values", f"cannot read {args.values}: {e.strerror or e}") from None
        if not rows or args.column not in rows[0]:
            raise CliError(EXIT_INVALID, "values", f"column {args.column!r} not found")
        try:
            values = np.array([float(r[args.column]) for r in rows])
            threshold = ThresholdSpec(args.eps_rel, args.eps_abs)
        except (ValueError, SpaceError) as e:
            raise CliError(EXIT_INVALID, "values", str(e)) from None
    try:
        idx = ground_truth_set(values, threshold)
    except SpaceError as e:
        raise CliError(EXIT_INVALID, "values", str(e)) from None
    report = {"indices": [int(i) for i in idx], "size": int(idx.size),
              "minimum": float(values.min()), "cutoff": float(threshold.cutoff(float(values.min()))),
              "eps_rel": threshold.eps_rel, "eps_abs": threshold.eps_abs}
    text = _dump(report)
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cashomon", description="Near-optimal model sets across model classes.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a benchmark experiment from a JSON config")
    p.add_argument("config")
    p.add_argument("-o", "--out", default="results")
    p.add_argument("--seed", type=int, help="replace the run seeds with this single seed")
    p.add_argument("--jobs", type=int, help="parallel runs (default: CASHOMON_JOBS or 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("capacity", help="Rashomon capacity of a prediction matrix")
    p.add_argument("predictions", help="regression CSV (rows=observations, cols=models) or classification JSON")
    p.add_argument("--task", choices=["regression", "classification"], default=None)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("vic", help="variable importance cloud for listed learners")
    p.add_argument("models", help="JSON: {models: [{class, hpc}], target, task, repeats, seed}")
    p.add_argument("data", help="dataset CSV with header")
    p.add_argument("-o", "--out", default="vic.csv")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_vic)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--kind", default="st")
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--out", default="st.csv")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("truth", help="ground-truth near-optimal set")
    p.add_argument("--values", help="CSV with a value column")
    p.add_argument("--column", default="value")
    p.add_argument("--config", help="experiment config; uses its landscape")
    p.add_argument("--candidates", help="also write the candidate CSV (with --config)")
    p.add_argument("--eps-rel", type=float, default=0.05)
    p.add_argument("--eps-abs", type=float, default=0.0)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_truth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as e:
        kind = "io" if e.code == EXIT_IO else "validation"
        sys.stderr.write(json.dumps({"error": kind, "field": e.field, "message": e.message}, sort_keys=True) + "\n")
        return e.code


if __name__ == "__main__":
    sys.exit(main())
