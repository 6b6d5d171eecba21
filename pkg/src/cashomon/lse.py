"""Active level-set estimation with an implicit, optimum-relative threshold.

``run_algorithm`` drives one of seven strategies over a finite candidate
set: the implicit-threshold truncated variance reduction method
(``TRUVARIMP``), its explicit-threshold parent (``TRUVAR``), the LSE
ambiguity rules with explicit and implicit thresholds, the straddle
heuristic, uniform random evaluation and expected-improvement Bayesian
optimization.  All share the same GP surrogate, evaluation loop and
predicted-set rule, so their F1 traces are directly comparable.

Conventions: candidates are addressed by integer index; boolean masks of
length ``n`` represent the sets L, H, U and M; every candidate is evaluated
at most once.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.stats import norm

from .gp import ClassKernel, SurrogateState
from .space import CandidateSet, ThresholdSpec

log = logging.getLogger(__name__)

ALGORITHMS = ("TRUVARIMP", "TRUVAR", "LSE", "LSE_IMP", "STRADDLE", "RANDOM", "OPTIMIZE")
IMPLICIT = ("TRUVARIMP", "LSE_IMP")

CSV_COLUMNS = ("iteration", "chosen_index", "value", "cum_cost", "size_L", "size_H",
               "size_U", "size_M", "incumbent", "f1", "epoch")


class BoxingError(RuntimeError):
    """The set of potential minimizers emptied in monotonic mode."""


@dataclass
class Partition:
    L: np.ndarray
    H: np.ndarray
    U: np.ndarray
    M: np.ndarray

    @classmethod
    def initial(cls, n: int) -> "Partition":
        z = np.zeros(n, dtype=bool)
        return cls(z.copy(), z.copy(), ~z, ~z)

    def copy(self) -> "Partition":
        return Partition(self.L.copy(), self.H.copy(), self.U.copy(), self.M.copy())

    def sizes(self) -> tuple[int, int, int, int]:
        return int(self.L.sum()), int(self.H.sum()), int(self.U.sum()), int(self.M.sum())

    def is_valid(self) -> bool:
        cover = self.L.astype(int) + self.H + self.U
        return bool(np.all(cover == 1) and not np.any(self.M & self.H))


@dataclass(frozen=True)
class EpochState:
    i: int = 1
    eta1: float = 1.0
    beta: float = 9.0
    r: float = 0.1
    slack: float = 0.0

    def __post_init__(self):
        if self.i < 1 or self.eta1 <= 0 or self.beta <= 0 or not 0 < self.r < 1 or self.slack < 0:
            raise ValueError(f"invalid epoch state {self}")

    @property
    def eta(self) -> float:
        return self.eta1 * self.r ** (self.i - 1)


@dataclass
class Bounds:
    lower: np.ndarray
    upper: np.ndarray
    c_min_pes: float = math.nan
    h_opt: float = math.nan
    h_pes: float = math.nan


@dataclass
class RunRecord:
    iteration: int
    chosen_index: int
    value: float
    cum_cost: float
    size_L: int
    size_H: int
    size_U: int
    size_M: int
    incumbent: float
    f1: float
    epoch: int
    eta: float = math.nan
    imputed: bool = False
    event_ok: bool | None = None
    h_opt: float = math.nan
    h_pes: float = math.nan
    partition: Partition | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_COLUMNS}


@dataclass
class RunConfig:
    """Settings of one run.  ``budget`` counts all evaluations incl. the initial design."""

    budget: int
    beta_sqrt: float = 3.0
    eta1: float = 1.0
    r: float = 0.1
    slack: float = 0.0
    n_init: int = 30
    monotonic: bool = False
    refit: bool = True
    restarts: int = 5
    full_refit_every: int = 10
    standardize: bool = True
    prior_mean: float = 0.0
    kernel: list | None = None
    noise_fn: Callable | None = None
    straddle_z: float = 1.96
    max_epochs: int = 50
    keep_partitions: bool = False

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be positive")

    @property
    def beta(self) -> float:
        return self.beta_sqrt ** 2

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("kernel", "noise_fn")}
        d["kernel"] = None if self.kernel is None else [k.to_dict() for k in self.kernel]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if d.get("kernel") is not None:
            d["kernel"] = [ClassKernel(np.array(k["lengthscales"]), k["variance"], k["noise"])
                           for k in d["kernel"]]
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown run setting(s): {sorted(bad)}")
        return cls(**d)


# -- scores and bounds ------------------------------------------------------

def confidence_bounds(mean, variance, beta: float):
    """Symmetric ``sqrt(beta)``-sigma interval around the posterior mean."""
    half = math.sqrt(beta) * np.sqrt(np.maximum(variance, 0.0))
    return mean - half, mean + half


def delta(indices, variances, p: float, epoch: EpochState) -> float:
    """Scaled excess variance summed over ``indices``."""
    v = np.asarray(variances, dtype=float)
    v = v[indices] if indices is not None else v
    return float(np.maximum(p * p * epoch.beta * v - epoch.eta ** 2, 0.0).sum())


def straddle_score(mean, variance, h: float, z: float = 1.96):
    return z * np.sqrt(np.maximum(variance, 0.0)) - np.abs(mean - h)


def lse_ambiguity(lower, upper, h_lo: float, h_hi: float):
    return np.minimum(upper - h_lo, h_hi - lower)


def ei_score(mean, variance, incumbent: float):
    """Expected improvement below ``incumbent`` (minimization)."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    imp = incumbent - mean
    pos = sd > 0
    zz = np.where(pos, imp / np.where(pos, sd, 1.0), 0.0)
    out = np.where(pos, imp * norm.cdf(zz) + sd * norm.pdf(zz), 0.0)
    return out if out.ndim else float(out)


# -- partition and epoch updates -------------------------------------------

def update_partition(bounds: Bounds, part: Partition, spec: ThresholdSpec,
                     nonmonotonic: bool = True) -> tuple[Partition, Bounds, bool]:
    """Reclassify candidates against the implicit threshold range.

    Returns the new partition, the bounds with ``c_min_pes``, ``h_opt`` and
    ``h_pes`` filled in, and a flag that is True when the previous set of
    potential minimizers was empty and had to be rebuilt from all points.
    """
    l, u = bounds.lower, bounds.upper
    M_prev, recovered = part.M, False
    if not M_prev.any():
        if not nonmonotonic:
            raise BoxingError("set of potential minimizers is empty")
        M_prev, recovered = np.ones_like(M_prev), True
    c_pes = float(u[M_prev].min())
    h_pes = spec.cutoff(c_pes)
    h_opt = spec.cutoff(float(l[M_prev].min()))

    low, high = u <= h_opt, l > h_pes
    if nonmonotonic:
        L, H = low, high & ~low
        M = l <= c_pes
    else:
        L = part.L | (part.U & low)
        H = part.H | (part.U & ~low & high)
        M = M_prev & (l <= c_pes)
    U = ~(L | H)
    M &= ~H
    if not nonmonotonic and not M.any():
        raise BoxingError("set of potential minimizers is empty")
    return Partition(L, H, U, M), replace(bounds, c_min_pes=c_pes, h_opt=h_opt, h_pes=h_pes), recovered


def explicit_partition(bounds: Bounds, part: Partition, h: float,
                       nonmonotonic: bool = True) -> Partition:
    """Classification against a known threshold; M is left empty."""
    l, u = bounds.lower, bounds.upper
    low, high = u <= h, l > h
    if nonmonotonic:
        L, H = low, high & ~low
    else:
        L = part.L | (part.U & low)
        H = part.H | (part.U & ~low & high)
    return Partition(L, H, ~(L | H), np.zeros_like(L))


def advance_epoch(part: Partition, variances, epoch: EpochState, eps_rel: float = 0.0,
                  max_epochs: int = 50) -> EpochState:
    """Shrink the target confidence while every tracked point is certain enough.

    ``variances`` are on the standardized scale, like ``eta``.
    """
    sd = math.sqrt(epoch.beta) * np.sqrt(np.maximum(np.asarray(variances, dtype=float), 0.0))
    top_u = sd[part.U].max() if part.U.any() else -np.inf
    top_m = sd[part.M].max() if part.M.any() else -np.inf
    while epoch.i < max_epochs:
        if top_u > (1 + epoch.slack) * epoch.eta:
            break
        if top_m > (1 + epoch.slack) / (1 + eps_rel) * epoch.eta:
            break
        epoch = replace(epoch, i=epoch.i + 1)
    return epoch


def epsilon_accurate(part: Partition, true_values, h: float, eps: float) -> bool:
    c = np.asarray(true_values, dtype=float)
    return bool(np.all(c[part.L] <= h) and np.all(c[part.H] > h)
                and np.all(np.abs(h - c[part.U]) <= eps / 2))


def predicted_set(means, observed: dict[int, float], spec: ThresholdSpec) -> np.ndarray:
    """Indices whose predicted value is within the cutoff of the incumbent.

    ``means`` is the posterior mean over all candidates; evaluated
    candidates use their observed value instead.
    """
    if not observed:
        raise ValueError("predicted_set needs at least one observation")
    pred = np.array(means, dtype=float)
    idx = np.fromiter(observed.keys(), dtype=int)
    pred[idx] = np.fromiter(observed.values(), dtype=float)
    return np.flatnonzero(pred <= spec.cutoff(min(observed.values())))


def f1_score(predicted, truth) -> float:
    predicted, truth = set(map(int, predicted)), set(map(int, truth))
    if not truth:
        raise ValueError("ground-truth set is empty")
    tp = len(predicted & truth)
    if tp == 0:
        return 0.0
    return 2.0 * tp / (len(predicted) + len(truth))


# -- acquisition -----------------------------------------------------------

def _excess(v, p, epoch):
    return np.maximum(p * p * epoch.beta * v - epoch.eta ** 2, 0.0)


def variance_reduction_scores(state: SurrogateState, cands: CandidateSet, part: Partition,
                              eligible: np.ndarray, epoch: EpochState, eps_rel: float,
                              use_minimizers: bool = True) -> np.ndarray:
    """Truncated variance-reduction gain per unit cost for every eligible candidate.

    Non-eligible entries are ``-inf``.  Only targets in the candidate's own
    class contribute, since cross-class posterior covariance is zero.
    """
    scores = np.full(len(cands), -np.inf)
    p_m = 1.0 + eps_rel
    for m in range(len(cands.space)):
        idx, X = cands.block(m)
        el = eligible[idx]
        if not el.any():
            continue
        tu = part.U[idx]
        tm = part.M[idx] if use_minimizers else np.zeros_like(tu)
        tgt = tu | tm
        if not tgt.any():
            scores[idx[el]] = 0.0
            continue
        Xt = X[tgt]
        _, before = state.predict_std(m, Xt)
        after, _ = state.lookahead_matrix(m, X[el], Xt)
        u_sel, m_sel = tu[tgt], tm[tgt]
        gain = (_excess(before[u_sel], 1.0, epoch).sum() - _excess(after[:, u_sel], 1.0, epoch).sum(1))
        if m_sel.any():
            gain = gain + (_excess(before[m_sel], p_m, epoch).sum()
                           - _excess(after[:, m_sel], p_m, epoch).sum(1))
        scores[idx[el]] = gain / cands.costs[idx[el]]
    return scores


def truvarimp_select(state: SurrogateState, cands: CandidateSet, part: Partition,
                     epoch: EpochState, eps_rel: float, evaluated: np.ndarray | None = None,
                     var_std: np.ndarray | None = None, use_minimizers: bool = True) -> int:
    """Candidate maximizing the truncated variance reduction per cost.

    The search runs over unevaluated members of U (and M).  When no score
    is positive the most uncertain such point is returned instead.
    """
    n = len(cands)
    evaluated = np.zeros(n, dtype=bool) if evaluated is None else evaluated
    pool = part.U | part.M if use_minimizers else part.U.copy()
    eligible = pool & ~evaluated
    if eligible.any():
        scores = variance_reduction_scores(state, cands, part, eligible, epoch, eps_rel, use_minimizers)
        if scores.max() > 0:
            return int(np.argmax(scores))
    if var_std is None:
        var_std = all_posteriors(state, cands, standardized=True)[1]
    if not eligible.any():
        eligible = ~evaluated
    return _argmax_masked(var_std, eligible)


def _argmax_masked(score, mask) -> int:
    if not mask.any():
        raise ValueError("no eligible candidate left")
    return int(np.argmax(np.where(mask, score, -np.inf)))


def all_posteriors(state: SurrogateState, cands: CandidateSet, standardized: bool = False):
    mean, var = np.empty(len(cands)), np.empty(len(cands))
    f = state.predict_std if standardized else state.predict
    for m in range(len(cands.space)):
        idx, X = cands.block(m)
        if len(idx):
            mean[idx], var[idx] = f(m, X)
    return mean, var


# -- driver ----------------------------------------------------------------

def run_algorithm(algo: str, objective: Callable[[int], float], cands: CandidateSet,
                  spec: ThresholdSpec, config: RunConfig, seed: int,
                  true_values=None) -> Iterator[RunRecord]:
    """Run one strategy and yield a record after every post-initial evaluation.

    Parameters
    ----------
    algo : str
        One of :data:`ALGORITHMS`.
    objective : callable
        Maps a candidate index to an observed (possibly noisy) value.
    cands : CandidateSet
    spec : ThresholdSpec
    config : RunConfig
    seed : int
        Seeds the initial design, random order and kernel restarts.
    true_values : array, optional
        Noise-free objective over ``cands``; enables F1 and the confidence
        event check in the records.
    """
    algo = algo.upper()
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
    n = len(cands)
    M_cls = len(cands.space)
    n_init = sum(min(config.n_init, len(cands.block(m)[0])) for m in range(M_cls))
    if config.budget <= n_init:
        raise ValueError(f"budget {config.budget} must exceed the initial design size {n_init}")
    if config.budget > n:
        raise ValueError(f"budget {config.budget} exceeds the {n} candidates")

    rng = np.random.default_rng(seed)
    truth = None
    if true_values is not None:
        from .space import ground_truth_set
        true_values = np.asarray(true_values, dtype=float)
        truth = ground_truth_set(true_values, spec)

    state = SurrogateState(cands.space.dims, config.kernel, config.standardize,
                           config.prior_mean, config.noise_fn)
    observed: dict[int, float] = {}
    evaluated = np.zeros(n, dtype=bool)
    cum_cost = 0.0

    def evaluate(i: int) -> tuple[float, bool]:
        nonlocal cum_cost
        try:
            v = float(objective(i))
            ok = math.isfinite(v)
        except Exception as exc:  # noqa: BLE001 - any failure is imputed
            log.warning("objective failed at candidate %d: %s", i, exc)
            ok = False
        if not ok:
            vals = np.fromiter(observed.values(), dtype=float)
            v = float(vals.max() + (vals.std() if vals.size > 1 else 1.0)) if vals.size else 1.0
        observed[i] = v
        evaluated[i] = True
        cum_cost += float(cands.costs[i])
        state.update(int(cands.class_index[i]), cands.encoded(i), v)
        return v, not ok

    for m in range(M_cls):
        idx = cands.block(m)[0]
        for i in rng.choice(idx, size=min(config.n_init, len(idx)), replace=False):
            evaluate(int(i))

    fit_rng = np.random.default_rng(rng.integers(2 ** 63))
    refit_count = 0

    def refit():
        nonlocal refit_count
        if not config.refit:
            return
        full = refit_count % max(config.full_refit_every, 1) == 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            state.fit(seed=int(fit_rng.integers(2 ** 31)), restarts=config.restarts, warm_only=not full)
        refit_count += 1

    order = rng.permutation(n) if algo == "RANDOM" else None
    epoch = EpochState(1, config.eta1, config.beta, config.r, config.slack)
    part = Partition.initial(n)
    nonmono = not config.monotonic

    refit()
    mean, var = all_posteriors(state, cands)
    var_std = var / state.shift_scale[1] ** 2
    pending_event = _covered(mean, var, config.beta, part, true_values)
    part, bounds, epoch = _reclassify(algo, state, mean, var, var_std, part, epoch, spec,
                                      observed, nonmono, config)

    for t in range(1, config.budget - n_init + 1):
        prev = part
        if algo in ("TRUVARIMP", "TRUVAR"):
            i = truvarimp_select(state, cands, part, epoch, spec.eps_rel, evaluated, var_std,
                                 use_minimizers=algo == "TRUVARIMP")
        elif algo == "RANDOM":
            i = int(next(j for j in order if not evaluated[j]))
        elif algo == "OPTIMIZE":
            i = _argmax_masked(ei_score(mean, var, min(observed.values())), ~evaluated)
        elif algo == "STRADDLE":
            h = spec.cutoff(min(observed.values()))
            i = _argmax_masked(straddle_score(mean, var, h, config.straddle_z), ~evaluated)
        elif algo == "LSE":
            h = spec.cutoff(min(observed.values()))
            amb = lse_ambiguity(bounds.lower, bounds.upper, h, h)
            i = _select_or_fallback(amb, part.U & ~evaluated, var, evaluated)
        else:  # LSE_IMP
            amb = lse_ambiguity(bounds.lower, bounds.upper, bounds.h_opt, bounds.h_pes)
            width = bounds.upper - bounds.lower
            score = np.where(part.M, np.maximum(width, np.where(part.U, amb, -np.inf)), amb)
            i = _select_or_fallback(score, (part.U | part.M) & ~evaluated, var, evaluated)

        value, imputed = evaluate(i)
        refit()
        mean, var = all_posteriors(state, cands)
        var_std = var / state.shift_scale[1] ** 2
        covered = _covered(mean, var, config.beta, prev, true_values)
        part, bounds, epoch = _reclassify(algo, state, mean, var, var_std, part, epoch, spec,
                                          observed, nonmono, config)

        event_ok = None
        f1 = math.nan
        if truth is not None:
            event_ok = covered and (pending_event if t == 1 else True)
            f1 = f1_score(predicted_set(mean, observed, spec), truth)
        sizes = part.sizes()
        yield RunRecord(t, i, value, cum_cost, *sizes, incumbent=min(observed.values()),
                        f1=f1, epoch=epoch.i, eta=epoch.eta, imputed=imputed, event_ok=event_ok,
                        h_opt=bounds.h_opt, h_pes=bounds.h_pes,
                        partition=part.copy() if config.keep_partitions else None)


def _covered(mean, var, beta, part, true_values) -> bool | None:
    # confidence event restricted to the points tracked in the previous step
    if true_values is None:
        return None
    lo, hi = confidence_bounds(mean, var, beta)
    tracked = part.U | part.M
    c = true_values[tracked]
    return bool(np.all((lo[tracked] <= c) & (c <= hi[tracked])))


def _select_or_fallback(score, mask, var, evaluated) -> int:
    if mask.any():
        return _argmax_masked(score, mask)
    return _argmax_masked(var, ~evaluated)


def _reclassify(algo, state, mean, var, var_std, part, epoch, spec, observed, nonmono, config):
    lo, hi = confidence_bounds(mean, var, config.beta)
    bounds = Bounds(lo, hi)
    if algo in IMPLICIT:
        part, bounds, recovered = update_partition(bounds, part, spec, nonmono)
        if recovered:
            log.info("potential-minimizer set was empty; rebuilt from all candidates")
        eps_rel = spec.eps_rel
    else:
        h = spec.cutoff(min(observed.values()))
        part = explicit_partition(bounds, part, h, nonmono)
        bounds = replace(bounds, h_opt=h, h_pes=h)
        eps_rel = 0.0
    if algo in ("TRUVARIMP", "TRUVAR"):
        epoch = advance_epoch(part, var_std, epoch, eps_rel, config.max_epochs)
    return part, bounds, epoch


def write_records(records: Sequence[RunRecord], path, extra: dict | None = None) -> None:
    """CSV with the stable column order; ``extra`` columns are prepended."""
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(extra) + list(CSV_COLUMNS))
        for r in records:
            w.writerow([str(v) for v in extra.values()] + [_cell(v) for v in r.row().values()])


def write_records_jsonl(records: Sequence[RunRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({k: _jsonable(v) for k, v in r.row().items()}, sort_keys=True) + "\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return v
