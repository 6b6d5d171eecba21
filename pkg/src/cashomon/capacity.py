"""Dataset-level Rashomon capacity of a finite model set.

The capacity is the largest average prediction spread achievable by a
probability weighting of the models: the weighted variance of predictions
for regression and the generalized Jensen-Shannon divergence (entropy of
the mixture minus mean entropy, natural log) for classification.  Both are
concave in the weights, so a Frank-Wolfe method with a duality-gap
certificate finds the global maximum over the simplex.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import entr

PROB_CLIP = 1e-12


class CapacityError(ValueError):
    pass


@dataclass
class PredictionMatrix:
    """Predictions of ``M`` models on ``n`` observations.

    ``values`` is ``(n, M)`` for regression and ``(n, M, g)`` class
    probabilities for classification.
    """

    values: np.ndarray
    task: str = "regression"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if self.task == "regression":
            if v.ndim != 2:
                raise CapacityError("regression predictions must be an n x M matrix")
        elif self.task == "classification":
            if v.ndim != 3:
                raise CapacityError("classification predictions must be an n x M x g tensor")
            if np.any(v < 0) or np.any(v > 1):
                raise CapacityError("class probabilities must lie in [0, 1]")
            if not np.allclose(v.sum(-1), 1.0, rtol=0, atol=1e-9):
                raise CapacityError("class probabilities must sum to 1 for every (observation, model)")
        else:
            raise CapacityError(f"unknown task {self.task!r}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise CapacityError("need at least one observation and one model")
        if not np.all(np.isfinite(v)):
            raise CapacityError("predictions must be finite")
        self.values = v

    @property
    def n_models(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_csv(cls, path) -> "PredictionMatrix":
        """Regression predictions: one row per observation, one column per model."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise CapacityError("empty prediction file")
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
        try:
            arr = np.array([[float(x) for x in r] for r in rows if r])
        except ValueError as e:
            raise CapacityError(f"non-numeric entry: {e}") from None
        return cls(arr, "regression")

    @classmethod
    def from_json(cls, path) -> "PredictionMatrix":
        """Classification tensor as nested lists ``[n][M][g]`` (or ``{"predictions": ...}``)."""
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        task = "classification"
        if isinstance(data, dict):
            task = data.get("task", task)
            data = data.get("predictions")
        try:
            arr = np.array(data, dtype=float)
        except (TypeError, ValueError) as e:
            raise CapacityError(f"malformed tensor: {e}") from None
        return cls(arr, task)


def _base_entropy(p: np.ndarray) -> np.ndarray:
    return entr(p).sum(-1)


def capacity_objective(P: PredictionMatrix, w) -> float:
    """Average weighted prediction spread at weights ``w``."""
    w = np.asarray(w, dtype=float)
    v = P.values
    if P.task == "regression":
        mix = v @ w
        return float(np.mean((v * v) @ w - mix * mix))
    mix = np.einsum("imk,m->ik", v, w)
    return float(np.mean(_base_entropy(mix) - _base_entropy(v) @ w))


def _gradient(P: PredictionMatrix, w: np.ndarray, clipped: np.ndarray | None) -> np.ndarray:
    v = P.values
    n = v.shape[0]
    if P.task == "regression":
        mix = v @ w
        return ((v * v).sum(0) - 2.0 * mix @ v) / n
    mix = np.einsum("imk,m->ik", clipped, w)
    logmix = np.log(np.maximum(mix, PROB_CLIP))
    cross = -np.einsum("imk,ik->m", clipped, logmix + 1.0)
    return (cross - _base_entropy(clipped).sum(0)) / n


def _clip(v: np.ndarray) -> np.ndarray:
    c = np.clip(v, PROB_CLIP, 1.0)
    return c / c.sum(-1, keepdims=True)


@dataclass
class CapacityResult:
    value: float
    weights: np.ndarray
    gap: float
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {"value": self.value, "weights": [float(x) for x in self.weights],
                "gap": self.gap, "iterations": self.iterations, "converged": self.converged}


def solve_capacity(P: PredictionMatrix, tol: float = 1e-6, max_iter: int = 10_000) -> CapacityResult:
    """Maximize :func:`capacity_objective` over the probability simplex.

    Pairwise Frank-Wolfe: mass moves from the worst active vertex to the
    linear-maximization vertex with an exact line search.  Stops once the
    Frank-Wolfe gap, an upper bound on the suboptimality, is below ``tol``.
    """
    if tol <= 0:
        raise CapacityError("tol must be positive")
    M = P.n_models
    w = np.full(M, 1.0 / M)
    if M == 1:
        return CapacityResult(capacity_objective(P, w), w, 0.0, 0, True)
    clipped = _clip(P.values) if P.task == "classification" else None
    gap = np.inf
    for it in range(1, max_iter + 1):
        g = _gradient(P, w, clipped)
        s = int(np.argmax(g))
        gap = float(g[s] - g @ w)
        if gap <= tol:
            return CapacityResult(capacity_objective(P, w), w, gap, it - 1, True)
        active = np.flatnonzero(w > 0)
        a = int(active[np.argmin(g[active])])
        d = np.zeros(M)
        d[s] += 1.0
        d[a] -= 1.0
        step = _line_search(P, w, d, w[a], clipped)
        drop = step >= w[a]
        w = w + step * d
        if drop:
            w[a] = 0.0
        w = np.maximum(w, 0.0)
        w /= w.sum()
    return CapacityResult(capacity_objective(P, w), w, gap, max_iter, False)


def _line_search(P, w, d, gmax, clipped) -> float:
    if P.task == "regression":
        v = P.values
        vd = v @ d
        slope = np.mean((v * v) @ d - 2.0 * (v @ w) * vd)
        curv = np.mean(vd * vd)
        if curv <= 0:
            return gmax if slope > 0 else 0.0
        return float(min(max(slope / (2.0 * curv), 0.0), gmax))

    def dphi(gamma):
        return float(_gradient(P, w + gamma * d, clipped) @ d)

    if dphi(0.0) <= 0:
        return 0.0
    if dphi(gmax) >= 0:
        return gmax
    return brentq(dphi, 0.0, gmax, xtol=1e-15, rtol=1e-14)


def simplex_grid(M: int, step: float) -> np.ndarray:
    """All weight vectors on the simplex whose entries are multiples of ``step``."""
    k = int(round(1.0 / step))
    if not np.isclose(k * step, 1.0):
        raise CapacityError("grid step must divide 1")
    pts = [c + (k - sum(c),) for c in itertools.product(range(k + 1), repeat=M - 1) if sum(c) <= k]
    return np.array(pts, dtype=float) / k


def brute_force_capacity(P: PredictionMatrix, grid_step: float = 0.01) -> float:
    """Grid maximum of the capacity objective; a verification oracle for small ``M``."""
    M = P.n_models
    if M > 4:
        raise CapacityError("brute force is limited to at most 4 models")
    W = simplex_grid(M, grid_step)
    v = P.values
    best = -np.inf
    for chunk in np.array_split(W, max(1, len(W) // 4096)):
        if P.task == "regression":
            mix = v @ chunk.T
            vals = ((v * v) @ chunk.T - mix * mix).mean(0)
        else:
            mix = np.einsum("imk,wm->wik", v, chunk)
            vals = (_base_entropy(mix) - chunk @ _base_entropy(v).T).mean(1)
        best = max(best, float(vals.max()))
    return best
