"""Synthetic CASH benchmarks and seeded experiment orchestration."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .gp import JITTER, ClassKernel, matern52
from .lse import ALGORITHMS, RunConfig, RunRecord, f1_score, run_algorithm, write_records
from .space import CandidateSet, CashSpace, SpaceError, ThresholdSpec, ground_truth_set, sample_candidates

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

DEFAULT_SPACE = {
    "classes": [
        {"name": "linear", "params": [
            {"name": "lambda", "kind": "continuous", "range": [1e-4, 1e3], "log": True}]},
        {"name": "tree", "params": [
            {"name": "cp", "kind": "continuous", "range": [1e-4, 0.2], "log": True},
            {"name": "minbucket", "kind": "integer", "range": [1, 64], "log": True}]},
        {"name": "net", "params": [
            {"name": "decay", "kind": "continuous", "range": [1e-6, 1.0], "log": True},
            {"name": "size", "kind": "integer", "range": [8, 512], "log": True}]},
    ]
}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


@dataclass
class Landscape:
    """Noise-free objective table over a candidate set plus an observation model."""

    kind: str
    values: np.ndarray
    noise: float = 0.0
    seed: int = 0
    params: dict = field(default_factory=dict)

    def objective(self, seed: int):
        """Evaluation callable for one run; noise draws depend only on ``seed``."""
        if self.noise <= 0:
            return lambda i: float(self.values[i])
        rng = np.random.default_rng([self.seed, seed])
        return lambda i: float(self.values[i] + self.noise * rng.standard_normal())


def _unique_rows(X):
    uniq, inv = np.unique(X, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)


def make_landscape(cands: CandidateSet, kind: str = "gp_sample", seed: int = 0,
                   noise: float = 0.0, floor: float = 10.0) -> Landscape:
    """Build a multimodal test objective with unequal per-class minima.

    ``gp_sample`` draws one Matern-5/2 sample path per class (unit variance,
    lengthscales uniform in [0.1, 0.5]) at the class's candidates and adds a
    class offset.  ``parametric`` places 2-5 Gaussian wells per class.
    Values are shifted so that the global minimum equals ``floor``.
    """
    rng = np.random.default_rng(seed)
    n_cls = len(cands.space)
    offsets = rng.permutation(n_cls) * 0.5 + rng.random(n_cls) * 0.25
    values = np.empty(len(cands))
    params: dict = {"offsets": offsets.tolist(), "classes": []}
    for m in range(n_cls):
        idx, X = cands.block(m)
        if X.shape[1] == 0:
            X = np.zeros((len(idx), 1))
        if kind == "gp_sample":
            ls = rng.uniform(0.1, 0.5, X.shape[1])
            U, inv = _unique_rows(X)
            K = matern52(U, U, ls, 1.0)
            K[np.diag_indices_from(K)] += JITTER
            f = np.linalg.cholesky(K) @ rng.standard_normal(len(U))
            values[idx] = f[inv] + offsets[m]
            params["classes"].append({"lengthscales": ls.tolist()})
        elif kind == "parametric":
            k = int(rng.integers(2, 6))
            centers = rng.random((k, X.shape[1]))
            depth = rng.uniform(0.5, 1.5, k)
            width = rng.uniform(0.1, 0.3, k)
            d2 = ((X[:, None, :] - centers[None]) ** 2).sum(-1)
            values[idx] = offsets[m] + 2.0 - (depth * np.exp(-d2 / (2 * width ** 2))).sum(1)
            params["classes"].append({"centers": centers.tolist(), "depth": depth.tolist(),
                                      "width": width.tolist()})
        else:
            raise ValueError(f"unknown landscape kind {kind!r}")
    values += floor - values.min()
    return Landscape(kind, values, float(noise), seed, params)


@dataclass
class LineBenchmark:
    """Single-class 1-D problem whose truth is a draw from the model's own prior."""

    candidates: CandidateSet
    values: np.ndarray
    kernel: ClassKernel
    offset: float

    def run_config(self, budget: int, **overrides) -> RunConfig:
        """Fixed-kernel, unstandardized, monotonic settings matching the prior."""
        base = dict(budget=budget, monotonic=True, refit=False, standardize=False,
                    prior_mean=self.offset, kernel=[self.kernel], keep_partitions=True)
        return RunConfig(**{**base, **overrides})


def line_benchmark(seed: int, n: int = 200, lengthscale: float = 0.2, offset: float = 5.0,
                   noise: float = 1e-6) -> LineBenchmark:
    """Sample c ~ GP(offset, Matern-5/2) on an ``n``-point grid over [0, 1].

    The returned kernel is the one used for sampling, so the surrogate is
    well specified and the confidence bounds are calibrated.
    """
    space = CashSpace.from_dict({"classes": [{"name": "line", "params": [
        {"name": "x", "kind": "continuous", "range": [0.0, 1.0]}]}]})
    grid = np.linspace(0.0, 1.0, n)
    cands = CandidateSet(space, np.zeros(n, dtype=int), [(float(x),) for x in grid])
    kern = ClassKernel(np.array([lengthscale]), 1.0, noise)
    K = matern52(grid[:, None], grid[:, None], kern.lengthscales, 1.0)
    K[np.diag_indices_from(K)] += JITTER
    f = offset + np.linalg.cholesky(K) @ np.random.default_rng(seed).standard_normal(n)
    if f.min() < 0:
        raise ValueError("sampled values are negative; increase the offset")
    return LineBenchmark(cands.with_values(f), f, kern, offset)


def f1(predicted, truth, universe_size: int | None = None) -> float:
    """F1 of set membership; ``universe_size`` only validates the indices."""
    if universe_size is not None:
        for s in (predicted, truth):
            s = np.asarray(list(s), dtype=int)
            if s.size and (s.min() < 0 or s.max() >= universe_size):
                raise ValueError("index outside the universe")
    return f1_score(predicted, truth)


@dataclass
class ExperimentConfig:
    space: CashSpace
    algorithms: list[str]
    budget: int
    seeds: list[int]
    threshold: ThresholdSpec = field(default_factory=ThresholdSpec)
    per_class_count: int = 500
    candidate_seed: int = 0
    landscape: dict = field(default_factory=lambda: {"kind": "gp_sample", "seed": 3, "noise": 0.0})
    run: dict = field(default_factory=dict)
    jobs: int | None = None

    def __post_init__(self):
        if not self.algorithms:
            raise ConfigError("algorithms", "at least one algorithm required")
        for a in self.algorithms:
            if a.upper() not in ALGORITHMS:
                raise ConfigError("algorithms", f"unknown algorithm {a!r}; expected one of {list(ALGORITHMS)}")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError("seeds", "seeds must be a nonempty list of distinct integers")
        total = self.per_class_count * len(self.space)
        if not 0 < self.budget <= total:
            raise ConfigError("budget", f"must be in [1, {total}] (number of candidates)")
        if self.landscape.get("kind", "gp_sample") not in ("gp_sample", "parametric"):
            raise ConfigError("landscape.kind", "must be 'gp_sample' or 'parametric'")
        try:
            rc = self.run_config()
        except (TypeError, ValueError) as e:
            raise ConfigError("run", str(e)) from None
        n_init = rc.n_init * len(self.space)
        if self.budget <= n_init:
            raise ConfigError("budget", f"must exceed the initial design size {n_init}")

    def run_config(self) -> RunConfig:
        return RunConfig.from_dict({**self.run, "budget": self.budget})

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "space": self.space.to_dict(),
            "algorithms": [a.upper() for a in self.algorithms],
            "budget": self.budget,
            "seeds": list(self.seeds),
            "threshold": {"eps_rel": self.threshold.eps_rel, "eps_abs": self.threshold.eps_abs},
            "per_class_count": self.per_class_count,
            "candidate_seed": self.candidate_seed,
            "landscape": dict(self.landscape),
            "run": dict(self.run),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported, expected {SCHEMA_VERSION}")
        try:
            space = CashSpace.from_dict(d.get("space", DEFAULT_SPACE))
        except SpaceError as e:
            raise ConfigError("space", str(e)) from None
        th = d.get("threshold", {})
        try:
            threshold = ThresholdSpec(float(th.get("eps_rel", 0.05)), float(th.get("eps_abs", 0.0)))
        except SpaceError as e:
            raise ConfigError("threshold", str(e)) from None
        for key in ("algorithms", "budget", "seeds"):
            if key not in d:
                raise ConfigError(key, "required field missing")
        if not isinstance(d["algorithms"], list):
            raise ConfigError("algorithms", "must be a list")
        known = {"schema_version", "space", "algorithms", "budget", "seeds", "threshold",
                 "per_class_count", "candidate_seed", "landscape", "run", "jobs"}
        extra = set(d) - known
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown field")
        return cls(space=space, algorithms=[str(a) for a in d["algorithms"]], budget=int(d["budget"]),
                   seeds=[int(s) for s in d["seeds"]], threshold=threshold,
                   per_class_count=int(d.get("per_class_count", 500)),
                   candidate_seed=int(d.get("candidate_seed", 0)),
                   landscape={"kind": "gp_sample", "seed": 3, "noise": 0.0, **d.get("landscape", {})},
                   run=dict(d.get("run", {})), jobs=d.get("jobs"))


def default_config(seeds: Sequence[int] = tuple(range(10)),
                   algorithms: Sequence[str] = ALGORITHMS, iterations: int = 200) -> ExperimentConfig:
    """Desk-scale benchmark: 3 classes x 500 candidates, ``iterations`` after the initial design."""
    space = CashSpace.from_dict(DEFAULT_SPACE)
    return ExperimentConfig(space=space, algorithms=list(algorithms),
                            budget=iterations + 30 * len(space), seeds=list(seeds))


@dataclass
class Problem:
    candidates: CandidateSet
    landscape: Landscape
    truth: np.ndarray


def build_problem(cfg: ExperimentConfig) -> Problem:
    cands = sample_candidates(cfg.space, cfg.per_class_count, cfg.candidate_seed)
    ls = cfg.landscape
    land = make_landscape(cands, ls.get("kind", "gp_sample"), int(ls.get("seed", 0)),
                          float(ls.get("noise", 0.0)), float(ls.get("floor", 10.0)))
    return Problem(cands.with_values(land.values), land, ground_truth_set(land.values, cfg.threshold))


def run_cell(cfg: ExperimentConfig, problem: Problem, algorithm: str, seed: int) -> list[RunRecord]:
    objective = problem.landscape.objective(seed)
    return list(run_algorithm(algorithm, objective, problem.candidates, cfg.threshold,
                              cfg.run_config(), seed, true_values=problem.landscape.values))


def _cell_job(cfg, problem, algorithm, seed):
    try:
        return algorithm, seed, run_cell(cfg, problem, algorithm, seed), None
    except Exception as exc:  # noqa: BLE001 - recorded, other cells continue
        log.exception("run %s/%s failed", algorithm, seed)
        return algorithm, seed, [], f"{type(exc).__name__}: {exc}"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[dict]
    records: dict
    failures: dict
    truth_size: int
    n_candidates: int

    def f1_matrix(self, algorithm: str) -> np.ndarray:
        """Seeds x iterations F1 array for one algorithm."""
        runs = [self.records[(algorithm, s)] for s in self.config.seeds if (algorithm, s) in self.records]
        return np.array([[r.f1 for r in recs] for recs in runs])

    def summary(self) -> dict:
        algos = {}
        for a in self.config.algorithms:
            F = self.f1_matrix(a.upper())
            if F.size == 0:
                algos[a.upper()] = {"n_runs": 0}
                continue
            algos[a.upper()] = {
                "n_runs": int(F.shape[0]),
                "mean_f1": [float(v) for v in F.mean(0)],
                "sd_f1": [float(v) for v in F.std(0, ddof=1)] if F.shape[0] > 1 else [0.0] * F.shape[1],
                "final_mean_f1": float(F[:, -1].mean()),
            }
        rc = self.config.run_config()
        return {
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config.config_hash(),
            "config": self.config.to_dict(),
            "resolved_run": {**rc.to_dict(), "eps_rel": self.config.threshold.eps_rel,
                             "eps_abs": self.config.threshold.eps_abs},
            "n_candidates": self.n_candidates,
            "truth_size": self.truth_size,
            "algorithms": algos,
            "failures": {f"{a}/{s}": msg for (a, s), msg in sorted(self.failures.items())},
        }


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None) -> ExperimentResult:
    """Run every (algorithm, seed) cell and collect per-iteration rows.

    Iterations count evaluations after the initial design.  Cells run in
    parallel processes when ``jobs`` (default ``CASHOMON_JOBS`` or 1) > 1;
    results do not depend on the degree of parallelism.
    """
    jobs = jobs or cfg.jobs or int(os.environ.get("CASHOMON_JOBS", "1"))
    problem = build_problem(cfg)
    rc = cfg.run_config()
    log.info("run settings: beta^1/2=%s eta1=%s r=%s slack=%s n_init=%s eps_rel=%s eps_abs=%s",
             rc.beta_sqrt, rc.eta1, rc.r, rc.slack, rc.n_init,
             cfg.threshold.eps_rel, cfg.threshold.eps_abs)
    cells = [(a.upper(), s) for a in cfg.algorithms for s in cfg.seeds]
    if jobs > 1:
        from joblib import Parallel, delayed
        out = Parallel(n_jobs=jobs)(delayed(_cell_job)(cfg, problem, a, s) for a, s in cells)
    else:
        out = [_cell_job(cfg, problem, a, s) for a, s in cells]
    rows, records, failures = [], {}, {}
    for a, s, recs, err in out:
        if err is not None:
            failures[(a, s)] = err
            continue
        records[(a, s)] = recs
        for r in recs:
            rows.append({"algorithm": a, "seed": s, **r.row()})
    return ExperimentResult(cfg, rows, records, failures, int(problem.truth.size), len(problem.candidates))


def write_experiment(result: ExperimentResult, outdir) -> list[Path]:
    """Write ``{hash}_{algorithm}_{seed}.csv`` per run and ``{hash}_summary.json``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    h = result.config.config_hash()
    paths = []
    for (a, s), recs in sorted(result.records.items()):
        p = outdir / f"{h}_{a}_{s}.csv"
        write_records(recs, p, extra={"algorithm": a, "seed": s})
        paths.append(p)
    p = outdir / f"{h}_summary.json"
    p.write_text(json.dumps(result.summary(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    paths.append(p)
    return paths


def bootstrap_mean_diff_ci(a, b, level: float = 0.9, n_boot: int = 10000, seed: int = 0):
    """Percentile bootstrap CI of mean(a) - mean(b) for paired samples."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    rng = np.random.default_rng(seed)
    means = d[rng.integers(len(d), size=(n_boot, len(d)))].mean(1)
    lo, hi = np.quantile(means, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(d.mean()), float(lo), float(hi)
