"""Hierarchical CASH search spaces, finite candidate sets and ground-truth sets.

A CASH space is a list of model classes, each with its own flat list of
hyperparameters.  Points are encoded into the unit cube of their class
(log-scaled parameters are mapped in log space, categoricals are one-hot)
so that a stationary ARD kernel can be placed on each class block.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

KINDS = ("continuous", "integer", "categorical")
RESERVED = frozenset({"class", "value", "cost"})


class SpaceError(ValueError):
    """Raised for malformed spaces or out-of-range parameter values."""


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None
    levels: tuple = ()
    log: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpaceError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if len(set(self.levels)) < 2 or len(set(self.levels)) != len(self.levels):
                raise SpaceError(f"{self.name}: categorical needs >= 2 distinct levels")
            if self.log:
                raise SpaceError(f"{self.name}: categorical cannot be log-scaled")
            return
        if self.lo is None or self.hi is None or not self.lo < self.hi:
            raise SpaceError(f"{self.name}: need lo < hi, got [{self.lo}, {self.hi}]")
        if self.log and self.lo <= 0:
            raise SpaceError(f"{self.name}: log-scaled range must have lo > 0")

    @property
    def width(self) -> int:
        """Number of encoded coordinates."""
        return len(self.levels) if self.kind == "categorical" else 1

    def _fwd(self, v):
        return np.log(v) if self.log else v

    def _span(self):
        return self._fwd(self.lo), self._fwd(self.hi)

    def check(self, value) -> None:
        if self.kind == "categorical":
            if value not in self.levels:
                raise SpaceError(f"{self.name}: {value!r} not in {list(self.levels)}")
            return
        if not (self.lo <= value <= self.hi):
            raise SpaceError(f"{self.name}: {value!r} outside [{self.lo}, {self.hi}]")

    def encode(self, value) -> np.ndarray:
        self.check(value)
        if self.kind == "categorical":
            out = np.zeros(len(self.levels))
            out[self.levels.index(value)] = 1.0
            return out
        a, b = self._span()
        z = (self._fwd(float(value)) - a) / (b - a)
        return np.array([min(max(z, 0.0), 1.0)])

    def decode(self, z: np.ndarray):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if self.kind == "categorical":
            return self.levels[int(np.argmax(z))]
        a, b = self._span()
        v = a + float(np.clip(z[0], 0.0, 1.0)) * (b - a)
        v = math.exp(v) if self.log else v
        if self.kind == "integer":
            return int(min(max(round(v), math.ceil(self.lo)), math.floor(self.hi)))
        return min(max(v, self.lo), self.hi)

    def sample(self, rng: np.random.Generator, size: int) -> list:
        if self.kind == "categorical":
            picks = rng.integers(len(self.levels), size=size)
            return [self.levels[i] for i in picks]
        a, b = self._span()
        v = a + rng.random(size) * (b - a)
        if self.log:
            v = np.exp(v)
        v = np.clip(v, self.lo, self.hi)
        if self.kind == "integer":
            lo, hi = math.ceil(self.lo), math.floor(self.hi)
            return [int(min(max(x, lo), hi)) for x in np.round(v)]
        return [float(x) for x in v]

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == "categorical":
            d["levels"] = list(self.levels)
        else:
            d["range"] = [self.lo, self.hi]
            d["log"] = self.log
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSpec":
        try:
            name, kind = d["name"], d["kind"]
        except KeyError as e:
            raise SpaceError(f"parameter entry missing field {e.args[0]!r}") from None
        if kind == "categorical":
            return cls(name, kind, levels=tuple(d.get("levels", ())))
        rng = d.get("range")
        if rng is None or len(rng) != 2:
            raise SpaceError(f"{name}: 'range' must be [lo, hi]")
        return cls(name, kind, float(rng[0]), float(rng[1]), log=bool(d.get("log", False)))


@dataclass(frozen=True)
class ModelClass:
    name: str
    params: tuple[ParamSpec, ...]

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise SpaceError(f"class {self.name}: duplicate parameter names")

    @property
    def dim(self) -> int:
        return sum(p.width for p in self.params)

    def encode(self, raw: Sequence) -> np.ndarray:
        if len(raw) != len(self.params):
            raise SpaceError(f"class {self.name}: expected {len(self.params)} values, got {len(raw)}")
        if not self.params:
            return np.zeros(0)
        return np.concatenate([p.encode(v) for p, v in zip(self.params, raw)])

    def decode(self, z: np.ndarray) -> tuple:
        out, k = [], 0
        for p in self.params:
            out.append(p.decode(z[k:k + p.width]))
            k += p.width
        return tuple(out)


@dataclass(frozen=True)
class CashSpace:
    classes: tuple[ModelClass, ...]

    def __post_init__(self):
        if not self.classes:
            raise SpaceError("a CASH space needs at least one model class")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise SpaceError("model class names must be unique")
        for c in self.classes:
            clash = RESERVED & {p.name for p in c.params}
            if clash:
                raise SpaceError(f"{c.name}: parameter name(s) {sorted(clash)} are reserved CSV columns")

    def __len__(self):
        return len(self.classes)

    @property
    def dims(self) -> list[int]:
        return [c.dim for c in self.classes]

    def index(self, name: str) -> int:
        for i, c in enumerate(self.classes):
            if c.name == name:
                return i
        raise SpaceError(f"unknown model class {name!r}")

    def to_dict(self) -> dict:
        return {"classes": [{"name": c.name, "params": [p.to_dict() for p in c.params]}
                            for c in self.classes]}

    @classmethod
    def from_dict(cls, d: dict) -> "CashSpace":
        if not isinstance(d, dict) or "classes" not in d:
            raise SpaceError("space config needs a 'classes' list")
        classes = []
        for c in d["classes"]:
            if "name" not in c:
                raise SpaceError("model class entry missing field 'name'")
            classes.append(ModelClass(c["name"], tuple(ParamSpec.from_dict(p) for p in c.get("params", []))))
        return cls(tuple(classes))

    @classmethod
    def from_json(cls, path) -> "CashSpace":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ConfigPoint:
    """One configuration: model class index (0-based) and its raw values."""

    class_index: int
    raw: tuple
    encoded: np.ndarray = field(compare=False, repr=False)

    @classmethod
    def make(cls, space: CashSpace, class_index: int, raw: Sequence) -> "ConfigPoint":
        if not 0 <= class_index < len(space):
            raise SpaceError(f"class index {class_index} out of range")
        return cls(class_index, tuple(raw), space.classes[class_index].encode(raw))


@dataclass(frozen=True)
class ThresholdSpec:
    eps_rel: float = 0.05
    eps_abs: float = 0.0

    def __post_init__(self):
        if self.eps_rel < 0 or self.eps_abs < 0:
            raise SpaceError("eps_rel and eps_abs must be nonnegative")

    def cutoff(self, reference: float) -> float:
        return reference * (1.0 + self.eps_rel) + self.eps_abs


class CandidateSet:
    """A finite, ordered set of configurations with per-point costs.

    Points are stored by class index and raw values; encoded matrices are
    built per class on demand because kernels only ever compare points of
    the same class.
    """

    def __init__(self, space: CashSpace, class_index, raw: Sequence[tuple],
                 costs=None, values=None):
        self.space = space
        self.class_index = np.asarray(class_index, dtype=int)
        self.raw = [tuple(r) for r in raw]
        n = len(self.raw)
        if self.class_index.shape != (n,):
            raise SpaceError("class_index and raw must have equal length")
        if n and (self.class_index.min() < 0 or self.class_index.max() >= len(space)):
            raise SpaceError("class index out of range")
        self.costs = np.ones(n) if costs is None else np.asarray(costs, dtype=float)
        if self.costs.shape != (n,) or np.any(self.costs <= 0):
            raise SpaceError("costs must be strictly positive, one per point")
        self.values = None if values is None else np.asarray(values, dtype=float)
        if self.values is not None and (self.values.shape != (n,) or not np.all(np.isfinite(self.values))):
            raise SpaceError("values must be finite, one per point")
        self._blocks: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self):
        return len(self.raw)

    def point(self, i: int) -> ConfigPoint:
        return ConfigPoint.make(self.space, int(self.class_index[i]), self.raw[i])

    def block(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Global indices and encoded matrix of the points in class ``m``."""
        if m not in self._blocks:
            idx = np.flatnonzero(self.class_index == m)
            cls = self.space.classes[m]
            X = np.array([cls.encode(self.raw[i]) for i in idx]).reshape(len(idx), cls.dim)
            self._blocks[m] = (idx, X)
        return self._blocks[m]

    def encoded(self, i: int) -> np.ndarray:
        idx, X = self.block(int(self.class_index[i]))
        return X[np.searchsorted(idx, i)]

    def duplicate_mask(self) -> np.ndarray:
        """Flags points whose (class, encoding) repeats an earlier point."""
        seen, out = set(), np.zeros(len(self), dtype=bool)
        for m in range(len(self.space)):
            idx, X = self.block(m)
            for i, row in zip(idx, X):
                key = (m, row.tobytes())
                out[i] = key in seen
                seen.add(key)
        return out

    def with_values(self, values) -> "CandidateSet":
        return CandidateSet(self.space, self.class_index, self.raw, self.costs, values)

    def param_columns(self) -> list[str]:
        cols: list[str] = []
        for c in self.space.classes:
            cols += [p.name for p in c.params if p.name not in cols]
        return cols

    def to_csv(self, path) -> None:
        cols = self.param_columns()
        header = ["class"] + cols + (["value"] if self.values is not None else []) + ["cost"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, raw in enumerate(self.raw):
                cls = self.space.classes[self.class_index[i]]
                byname = {p.name: v for p, v in zip(cls.params, raw)}
                row = [cls.name] + [_fmt(byname[c]) if c in byname else "" for c in cols]
                if self.values is not None:
                    row.append(repr(float(self.values[i])))
                row.append(repr(float(self.costs[i])))
                w.writerow(row)

    @classmethod
    def from_csv(cls, space: CashSpace, path) -> "CandidateSet":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        ci, raws, costs, values = [], [], [], []
        for r in rows:
            m = space.index(r["class"])
            raws.append(tuple(_parse(p, r.get(p.name, "")) for p in space.classes[m].params))
            ci.append(m)
            costs.append(float(r["cost"]) if r.get("cost") not in (None, "") else 1.0)
            if r.get("value") not in (None, ""):
                values.append(float(r["value"]))
        if values and len(values) != len(rows):
            raise SpaceError("value column must be filled for every row or none")
        return cls(space, ci, raws, costs, values or None)


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _parse(p: ParamSpec, s: str):
    if s == "":
        raise SpaceError(f"missing value for parameter {p.name!r}")
    if p.kind == "integer":
        return int(float(s))
    if p.kind == "continuous":
        return float(s)
    for lv in p.levels:
        if str(lv) == s:
            return lv
    raise SpaceError(f"{p.name}: {s!r} not in {list(p.levels)}")


def encode(raw: Sequence, specs: Sequence[ParamSpec]) -> np.ndarray:
    """Encode raw parameter values into the unit cube of their class."""
    return ModelClass("_", tuple(specs)).encode(raw)


def decode(z: np.ndarray, specs: Sequence[ParamSpec]) -> tuple:
    return ModelClass("_", tuple(specs)).decode(np.asarray(z, dtype=float))


def sample_candidates(space: CashSpace, per_class_count: int, seed: int,
                      costs=None) -> CandidateSet:
    """Draw ``per_class_count`` configurations uniformly from every class.

    Integers are drawn continuously on their (log) scale and rounded, so
    distinct draws can share an encoding; those are kept, see
    :meth:`CandidateSet.duplicate_mask`.
    """
    if per_class_count < 1:
        raise SpaceError("per_class_count must be >= 1")
    rng = np.random.default_rng(seed)
    ci: list[int] = []
    raws: list[tuple] = []
    for m, c in enumerate(space.classes):
        cols = [p.sample(rng, per_class_count) for p in c.params]
        raws += list(zip(*cols)) if cols else [()] * per_class_count
        ci += [m] * per_class_count
    return CandidateSet(space, ci, raws, costs)


def ground_truth_set(values: Iterable[float], spec: ThresholdSpec) -> np.ndarray:
    """Indices with value within the relative/absolute slack of the minimum."""
    v = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if v.size == 0:
        raise SpaceError("ground_truth_set needs at least one value")
    if not np.all(np.isfinite(v)):
        raise SpaceError("values must be finite")
    if spec.eps_rel > 0 and np.any(v < 0):
        raise SpaceError("relative slack requires nonnegative values")
    return np.flatnonzero(v <= spec.cutoff(v.min()))
