"""Permutation feature importance and variable importance clouds.

Includes the ST data-generating process (five features, target driven by
X4, X5 and their interaction) and two small learners, ridge regression and
k-nearest neighbours, that stand in for real model classes in end-to-end
analyses.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .space import CashSpace, SpaceError

LEARNER_SPACE = CashSpace.from_dict({"classes": [
    {"name": "ridge", "params": [{"name": "penalty", "kind": "continuous", "range": [1e-6, 1e3], "log": True}]},
    {"name": "knn", "params": [{"name": "k", "kind": "integer", "range": [1, 64], "log": True}]},
]})


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    task: str = "regression"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        n, p = self.X.shape
        if n < 2 or p < 1:
            raise ValueError("need n >= 2 observations and p >= 1 features")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features contain non-finite entries")
        self.y = np.asarray(self.y, dtype=float if self.task == "regression" else None)
        if len(self.y) != n:
            raise ValueError("target length does not match feature rows")
        if self.task == "regression" and not np.all(np.isfinite(self.y)):
            raise ValueError("target contains non-finite entries")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if not self.feature_names:
            self.feature_names = [f"X{j + 1}" for j in range(p)]
        if len(self.feature_names) != p:
            raise ValueError("one name per feature required")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], list(self.feature_names), self.task)

    def split(self, seed: int = 0, train_frac: float = 2 / 3) -> tuple["Dataset", "Dataset"]:
        perm = np.random.default_rng(seed).permutation(self.n)
        k = int(round(train_frac * self.n))
        return self.subset(np.sort(perm[:k])), self.subset(np.sort(perm[k:]))

    def to_csv(self, path, target_name: str = "Y") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.feature_names + [target_name])
            for row, t in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in row] + [repr(float(t)) if self.task == "regression" else str(t)])

    @classmethod
    def from_csv(cls, path, target: str = "Y", task: str = "regression") -> "Dataset":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError("empty dataset file")
        header = rows[0]
        if target not in header:
            raise ValueError(f"target column {target!r} not found")
        t = header.index(target)
        feats = [h for j, h in enumerate(header) if j != t]
        body = [r for r in rows[1:] if r]
        X = np.array([[float(v) for j, v in enumerate(r) if j != t] for r in body])
        y = [r[t] for r in body]
        y = np.array([float(v) for v in y]) if task == "regression" else np.array(y)
        return cls(X, y, feats, task)


def generate_st(n: int, seed: int = 0) -> Dataset:
    """ST data: X2, X4 are noisy copies of X1, X3; Y = X4 + X5 + X4*X5 + noise.

    Noise terms are normal with variances 0.001 (X2), 0.1 (X4) and 0.1 (Y).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x1, x3, x5 = rng.standard_normal((3, n))
    x2 = x1 + rng.normal(0.0, math.sqrt(0.001), n)
    x4 = x3 + rng.normal(0.0, math.sqrt(0.1), n)
    y = x4 + x5 + x4 * x5 + rng.normal(0.0, math.sqrt(0.1), n)
    X = np.column_stack([x1, x2, x3, x4, x5])
    names = [f"X{j}" for j in range(1, 6)]
    if n == 1:
        # Dataset requires two rows; keep the generator usable for n == 1
        return _RawDataset(X, y, names)
    return Dataset(X, y, names)


@dataclass
class _RawDataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    task: str = "regression"

    def to_csv(self, path, target_name: str = "Y") -> None:
        Dataset.to_csv(self, path, target_name)  # type: ignore[arg-type]


# -- learners ---------------------------------------------------------------

@dataclass
class Predictor:
    """A fitted model.  ``predict`` returns values (regression) or class probabilities."""

    predict_fn: Callable[[np.ndarray], np.ndarray]
    model_class: str
    hpc: dict
    classes: np.ndarray | None = None

    def predict(self, X) -> np.ndarray:
        return self.predict_fn(np.asarray(X, dtype=float))


def _check_hpc(model_class: str, hpc: dict) -> None:
    m = LEARNER_SPACE.index(model_class)
    for p in LEARNER_SPACE.classes[m].params:
        if p.name not in hpc:
            raise SpaceError(f"{model_class}: missing hyperparameter {p.name!r}")
        p.check(hpc[p.name])
        if p.kind == "integer" and int(hpc[p.name]) != hpc[p.name]:
            raise SpaceError(f"{p.name}: must be an integer")
    extra = set(hpc) - {p.name for p in LEARNER_SPACE.classes[m].params}
    if extra:
        raise SpaceError(f"{model_class}: unknown hyperparameter(s) {sorted(extra)}")


def _targets(data: Dataset):
    if data.task == "regression":
        return data.y[:, None], None
    classes, inv = np.unique(data.y, return_inverse=True)
    return np.eye(len(classes))[inv], classes


def fit_learner(model_class: str, hpc: dict, data: Dataset) -> Predictor:
    """Fit ``ridge`` (penalty) or ``knn`` (k) on ``data``."""
    _check_hpc(model_class, hpc)
    Y, classes = _targets(data)
    reg = data.task == "regression"
    if model_class == "ridge":
        lam = float(hpc["penalty"])
        xm, ym = data.X.mean(0), Y.mean(0)
        Xc = data.X - xm
        A = Xc.T @ Xc + lam * np.eye(Xc.shape[1])
        B = np.linalg.solve(A, Xc.T @ (Y - ym))
        intercept = ym - xm @ B

        def predict(X):
            out = X @ B + intercept
            if reg:
                return out[:, 0]
            out = np.clip(out, 0.0, None)
            s = out.sum(1, keepdims=True)
            return np.where(s > 0, out / np.where(s > 0, s, 1.0), 1.0 / out.shape[1])

        pred = Predictor(predict, "ridge", dict(hpc), classes)
        pred.coef = B[:, 0] if reg else B  # type: ignore[attr-defined]
        pred.intercept = float(intercept[0]) if reg else intercept  # type: ignore[attr-defined]
        return pred

    k = int(hpc["k"])
    if k > data.n:
        raise SpaceError(f"k: {k} exceeds the {data.n} training rows")
    mu = data.X.mean(0)
    sd = data.X.std(0)
    sd = np.where(sd > 0, sd, 1.0)
    tree = cKDTree((data.X - mu) / sd)

    def predict(X):
        _, nb = tree.query((X - mu) / sd, k=k)
        nb = np.asarray(nb).reshape(len(X), k)
        out = Y[nb].mean(1)
        return out[:, 0] if reg else out

    return Predictor(predict, "knn", dict(hpc), classes)


# -- importance -------------------------------------------------------------

def _loss_fn(task: str, classes=None) -> Callable:
    if task == "regression":
        return lambda y, p: float(np.mean((y - p) ** 2))

    def brier(y, p):
        onehot = (np.asarray(y)[:, None] == np.asarray(classes)[None, :]).astype(float)
        return float(np.mean(((p - onehot) ** 2).sum(1)))

    return brier


def pfi(model: Predictor, data: Dataset, feature: int, repeats: int = 10, seed: int = 0,
        loss: Callable | None = None) -> float:
    """Mean loss increase over ``repeats`` permutations of one feature column."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    loss = loss or _loss_fn(data.task, model.classes)
    base = loss(data.y, model.predict(data.X))
    rng = np.random.default_rng(np.random.SeedSequence([seed, feature]))
    X = data.X.copy()
    total = 0.0
    for _ in range(repeats):
        X[:, feature] = data.X[rng.permutation(data.n), feature]
        total += loss(data.y, model.predict(X)) - base
    return total / repeats


@dataclass
class FIVector:
    values: np.ndarray
    scaled: bool = False


def pfi_vector(model: Predictor, data: Dataset, repeats: int = 10, seed: int = 0,
               loss: Callable | None = None) -> FIVector:
    return FIVector(np.array([pfi(model, data, j, repeats, seed, loss) for j in range(data.X.shape[1])]))


def scale_fi(v: FIVector | Sequence[float]) -> FIVector:
    """Divide by the largest entry so that it becomes 1; all-nonpositive maxima are left as is.

    Ratios beyond the float range (a subnormal maximum) saturate to -inf.
    """
    vals = np.asarray(v.values if isinstance(v, FIVector) else v, dtype=float)
    top = vals.max() if vals.size else 0.0
    if top <= 0:
        return FIVector(vals.copy(), scaled=True)
    with np.errstate(over="ignore"):
        return FIVector(vals / top, scaled=True)


@dataclass
class VIC:
    models: list[dict]
    raw: np.ndarray
    scaled: np.ndarray
    feature_names: list[str]

    def rows(self) -> list[dict]:
        out = []
        for i, meta in enumerate(self.models):
            for j, f in enumerate(self.feature_names):
                out.append({"model_id": i, "class": meta["class"], "feature": f,
                            "pfi_raw": float(self.raw[i, j]), "pfi_scaled": float(self.scaled[i, j])})
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["model_id", "class", "feature", "pfi_raw", "pfi_scaled"])
            for r in self.rows():
                w.writerow([r["model_id"], r["class"], r["feature"], repr(r["pfi_raw"]), repr(r["pfi_scaled"])])


def vic(models: Sequence[Predictor], data: Dataset, repeats: int = 10, seed: int = 0,
        loss: Callable | None = None) -> VIC:
    """Scaled PFI vectors for every model, using the same permutations for all."""
    if not models:
        raise ValueError("need at least one model")
    raw = np.array([pfi_vector(m, data, repeats, seed, loss).values for m in models])
    scaled = np.array([scale_fi(r).values for r in raw])
    meta = [{"class": m.model_class, "hpc": dict(m.hpc)} for m in models]
    return VIC(meta, raw, scaled, list(data.feature_names))
