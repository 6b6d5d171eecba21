"""Gaussian-process surrogate over a CASH space.

The covariance between configurations of different model classes is zero,
so the surrogate is a stack of independent per-class GPs that share one
affine standardization of the objective.  Each class block uses a Matern-5/2
kernel with one lengthscale per encoded dimension.

All quantities inside a block live on the standardized scale; ``predict``
and friends convert back to objective units.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .space import ConfigPoint

SQRT5 = math.sqrt(5.0)
JITTER = 1e-8
VAR_FLOOR = 1e-12

LENGTHSCALE_BOUNDS = (1e-2, 1e2)
RESTARTS = 5


class GPNumericalError(ArithmeticError):
    """Kernel matrix could not be factorized even with jitter."""


@dataclass
class ClassKernel:
    """Kernel hyperparameters of one model class (standardized units)."""

    lengthscales: np.ndarray
    variance: float = 1.0
    noise: float = 1e-4

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(self.lengthscales <= 0) or self.variance <= 0 or self.noise < 0:
            raise ValueError("lengthscales and variance must be positive, noise nonnegative")

    def to_dict(self) -> dict:
        return {"lengthscales": [float(v) for v in self.lengthscales],
                "variance": float(self.variance), "noise": float(self.noise)}


KernelParams = list  # list[ClassKernel], one block per model class


def default_kernel(dims: Sequence[int], lengthscale: float = 0.5, variance: float = 1.0,
                   noise: float = 1e-4) -> list[ClassKernel]:
    return [ClassKernel(np.full(max(d, 1), lengthscale), variance, noise) for d in dims]


def kernel_to_json(kernel: Sequence[ClassKernel]) -> str:
    return json.dumps([k.to_dict() for k in kernel], sort_keys=True, indent=2)


def _scaled_dist(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    A = A / lengthscales
    B = B / lengthscales
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.sqrt(np.maximum(d2, 0.0))


def matern52(a, b, lengthscales, variance: float = 1.0):
    """Matern-5/2 ARD covariance.

    ``a`` and ``b`` may be single encoded vectors (returns a float) or
    matrices with one point per row (returns the cross-covariance matrix).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
    single = a.ndim == 1 and b.ndim == 1
    A, B = np.atleast_2d(a), np.atleast_2d(b)
    if A.shape[1] != ls.size or B.shape[1] != ls.size:
        raise ValueError(f"dimension mismatch: points {A.shape[1]}/{B.shape[1]}, lengthscales {ls.size}")
    r = _scaled_dist(A, B, ls)
    K = variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)
    return float(K[0, 0]) if single else K


def block_kernel(x: ConfigPoint, y: ConfigPoint, kernel: Sequence[ClassKernel]) -> float:
    """CASH covariance: zero across classes, Matern-5/2 within a class."""
    for p in (x, y):
        if not 0 <= p.class_index < len(kernel):
            raise ValueError(f"unknown class index {p.class_index}")
    if x.class_index != y.class_index:
        return 0.0
    k = kernel[x.class_index]
    return matern52(_pad(x.encoded), _pad(y.encoded), k.lengthscales, k.variance)


def _pad(x: np.ndarray) -> np.ndarray:
    # zero-parameter classes get a single constant coordinate
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape[:-1] + (1,)) if x.shape[-1] == 0 else x


class SurrogateState:
    """Block-diagonal GP posterior over a CASH space.

    Parameters
    ----------
    dims : sequence of int
        Encoded dimension of every model class.
    kernel : list of ClassKernel, optional
        Initial kernel blocks; defaults to :func:`default_kernel`.
    standardize : bool
        Standardize observations to zero mean and unit variance.  When
        False, ``prior_mean`` is subtracted and no scaling is applied.
    noise_fn : callable, optional
        ``noise_fn(class_index, X) -> variances`` in objective units.
        Replaces the fitted homoscedastic noise of every block.
    """

    def __init__(self, dims: Sequence[int], kernel: Sequence[ClassKernel] | None = None,
                 standardize: bool = True, prior_mean: float = 0.0,
                 noise_fn: Callable[[int, np.ndarray], np.ndarray] | None = None):
        self.dims = [max(int(d), 1) for d in dims]
        self.kernel = [replace(k) for k in (kernel or default_kernel(self.dims))]
        if len(self.kernel) != len(self.dims):
            raise ValueError("one kernel block per class required")
        self.standardize = standardize
        self.prior_mean = prior_mean
        self.noise_fn = noise_fn
        self._X = [np.zeros((0, d)) for d in self.dims]
        self._y = [np.zeros(0) for _ in self.dims]
        self._chol: list = [None] * len(self.dims)
        self._alpha: list = [None] * len(self.dims)
        self._stats = None

    # -- bookkeeping -------------------------------------------------------

    def copy(self) -> "SurrogateState":
        new = SurrogateState(self.dims, self.kernel, self.standardize, self.prior_mean, self.noise_fn)
        new._X = [x.copy() for x in self._X]
        new._y = [y.copy() for y in self._y]
        return new

    @property
    def n_obs(self) -> int:
        return sum(len(y) for y in self._y)

    def observations(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        return self._X[m], self._y[m]

    @property
    def shift_scale(self) -> tuple[float, float]:
        if self._stats is None:
            if not self.standardize:
                self._stats = (self.prior_mean, 1.0)
            else:
                y = np.concatenate(self._y)
                if y.size == 0:
                    self._stats = (0.0, 1.0)
                else:
                    sd = float(y.std())
                    self._stats = (float(y.mean()), sd if sd > 1e-12 else 1.0)
        return self._stats

    def _invalidate(self, m: int | None = None, stats: bool = False):
        if stats:
            self._stats = None
            self._alpha = [None] * len(self.dims)
            if self.noise_fn is not None:
                self._chol = [None] * len(self.dims)
        if m is None:
            self._chol = [None] * len(self.dims)
            self._alpha = [None] * len(self.dims)
        else:
            self._chol[m] = None
            self._alpha[m] = None

    def set_kernel(self, kernel: Sequence[ClassKernel]) -> None:
        self.kernel = [replace(k) for k in kernel]
        self._invalidate()

    def update(self, point_or_class, x=None, value=None) -> "SurrogateState":
        """Add one observation, in place.  Returns ``self`` for chaining.

        Accepts either ``update(ConfigPoint, value)`` or
        ``update(class_index, encoded, value)``.
        """
        if isinstance(point_or_class, ConfigPoint):
            m, x, value = point_or_class.class_index, point_or_class.encoded, x
        else:
            m = int(point_or_class)
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"observation must be finite, got {value}")
        x = _pad(np.asarray(x, dtype=float)).reshape(1, -1)
        if x.shape[1] != self.dims[m]:
            raise ValueError("encoded point has wrong dimension for its class")
        self._X[m] = np.vstack([self._X[m], x])
        self._y[m] = np.append(self._y[m], value)
        self._invalidate(m, stats=self.standardize)
        return self

    # -- linear algebra ----------------------------------------------------

    def obs_noise(self, m: int, X: np.ndarray) -> np.ndarray:
        """Observation variance at ``X`` on the standardized scale, incl. jitter."""
        k = self.kernel[m]
        if self.noise_fn is not None:
            _, s = self.shift_scale
            base = np.asarray(self.noise_fn(m, X), dtype=float) / (s * s)
        else:
            base = np.full(len(X), k.noise)
        return base + JITTER * k.variance

    def _factor(self, m: int):
        if self._chol[m] is None:
            X, k = self._X[m], self.kernel[m]
            K = matern52(X, X, k.lengthscales, k.variance)
            K[np.diag_indices_from(K)] += self.obs_noise(m, X)
            try:
                self._chol[m] = cholesky(K, lower=True)
            except np.linalg.LinAlgError:
                cond = np.linalg.cond(K)
                raise GPNumericalError(
                    f"class {m}: covariance not positive definite (n={len(X)}, cond={cond:.3e}, "
                    f"noise={k.noise:.3e}, variance={k.variance:.3e})") from None
        return self._chol[m]

    def _weights(self, m: int) -> np.ndarray:
        if self._alpha[m] is None:
            shift, scale = self.shift_scale
            z = (self._y[m] - shift) / scale
            self._alpha[m] = cho_solve((self._factor(m), True), z) if len(z) else z
        return self._alpha[m]

    # -- posterior (standardized scale) ------------------------------------

    def predict_std(self, m: int, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance of class ``m`` at rows of ``Xq``, standardized."""
        Xq = _pad(np.atleast_2d(np.asarray(Xq, dtype=float)))
        k = self.kernel[m]
        prior = np.full(len(Xq), k.variance)
        if len(self._y[m]) == 0:
            return np.zeros(len(Xq)), prior
        Kx = matern52(self._X[m], Xq, k.lengthscales, k.variance)
        mean = Kx.T @ self._weights(m)
        V = solve_triangular(self._factor(m), Kx, lower=True)
        var = prior - (V * V).sum(0)
        return mean, np.maximum(var, 0.0)

    def cov_std(self, m: int, Xa: np.ndarray, Xb: np.ndarray) -> np.ndarray:
        """Posterior cross-covariance within class ``m``, standardized."""
        Xa = _pad(np.atleast_2d(np.asarray(Xa, dtype=float)))
        Xb = _pad(np.atleast_2d(np.asarray(Xb, dtype=float)))
        k = self.kernel[m]
        C = matern52(Xa, Xb, k.lengthscales, k.variance)
        if len(self._y[m]):
            L = self._factor(m)
            Va = solve_triangular(L, matern52(self._X[m], Xa, k.lengthscales, k.variance), lower=True)
            Vb = solve_triangular(L, matern52(self._X[m], Xb, k.lengthscales, k.variance), lower=True)
            C = C - Va.T @ Vb
        return C

    def lookahead_matrix(self, m: int, Xc: np.ndarray, Xt: np.ndarray):
        """Standardized variance at targets ``Xt`` after one more observation at each candidate.

        Returns an array of shape (len(Xc), len(Xt)) and a boolean mask of
        candidates whose predictive variance was below the numerical floor
        (their rows are left at the current variance).
        """
        Xc = _pad(np.atleast_2d(np.asarray(Xc, dtype=float)))
        Xt = _pad(np.atleast_2d(np.asarray(Xt, dtype=float)))
        _, var_t = self.predict_std(m, Xt)
        _, var_c = self.predict_std(m, Xc)
        C = self.cov_std(m, Xc, Xt)
        denom = var_c + self.obs_noise(m, Xc)
        degenerate = denom < VAR_FLOOR
        red = C * C / np.where(degenerate, 1.0, denom)[:, None]
        red[degenerate] = 0.0
        return np.maximum(var_t[None, :] - red, 0.0), degenerate

    # -- objective-unit API ------------------------------------------------

    def predict(self, m: int, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        shift, scale = self.shift_scale
        mean, var = self.predict_std(m, Xq)
        return shift + scale * mean, scale * scale * var

    def posterior(self, query: ConfigPoint) -> tuple[float, float]:
        mean, var = self.predict(query.class_index, query.encoded)
        return float(mean[0]), float(var[0])

    def lookahead_variance(self, candidate: ConfigPoint, target: ConfigPoint,
                           return_flag: bool = False):
        """Variance at ``target`` if ``candidate`` were observed next (objective units)."""
        _, scale = self.shift_scale
        if candidate.class_index != target.class_index:
            var = self.posterior(target)[1]
            return (var, False) if return_flag else var
        M, deg = self.lookahead_matrix(candidate.class_index, candidate.encoded, target.encoded)
        var = float(M[0, 0]) * scale * scale
        return (var, bool(deg[0])) if return_flag else var

    # -- hyperparameter fitting -------------------------------------------

    def fit(self, seed: int = 0, restarts: int = RESTARTS, classes: Sequence[int] | None = None,
            warm_only: bool = False) -> list[ClassKernel]:
        """Refit every class block with >= 2 observations by maximum likelihood."""
        rng = np.random.default_rng(seed)
        shift, scale = self.shift_scale
        allz = (np.concatenate(self._y) - shift) / scale
        svar = float(allz.var()) if allz.size > 1 else 1.0
        svar = max(svar, 1e-6)
        for m in (range(len(self.dims)) if classes is None else classes):
            if len(self._y[m]) < 2:
                continue
            z = (self._y[m] - shift) / scale
            self.kernel[m] = _fit_block(self._X[m], z, self.kernel[m], svar, rng,
                                        1 if warm_only else restarts,
                                        fit_noise=self.noise_fn is None)
            self._chol[m] = None
            self._alpha[m] = None
        return self.kernel


def fit_hyperparams(state: SurrogateState, seed: int = 0, restarts: int = RESTARTS) -> list[ClassKernel]:
    """Refit ``state`` in place and return its new kernel blocks."""
    return state.fit(seed=seed, restarts=restarts)


def _nll(theta: np.ndarray, X: np.ndarray, z: np.ndarray, fit_noise: bool, fixed_noise: float):
    d = X.shape[1]
    ls = np.exp(theta[:d])
    v = math.exp(theta[d])
    noise = math.exp(theta[d + 1]) if fit_noise else fixed_noise
    n = len(z)
    R = _scaled_dist(X, X, ls)
    e = np.exp(-SQRT5 * R)
    K = v * (1.0 + SQRT5 * R + 5.0 / 3.0 * R * R) * e
    K[np.diag_indices(n)] += noise + JITTER * v
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = cho_solve((L, True), z)
    nll = 0.5 * z @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * math.log(2 * math.pi)
    W = cho_solve((L, True), np.eye(n)) - np.outer(alpha, alpha)
    grad = np.empty_like(theta)
    base = (5.0 / 3.0) * v * (1.0 + SQRT5 * R) * e
    for j in range(d):
        diff = X[:, j][:, None] - X[:, j][None, :]
        grad[j] = 0.5 * np.sum(W * base * diff * diff) / ls[j] ** 2
    Kv = K.copy()
    Kv[np.diag_indices(n)] -= noise
    grad[d] = 0.5 * np.sum(W * Kv)
    if fit_noise:
        grad[d + 1] = 0.5 * noise * np.trace(W)
    return float(nll), grad


def _fit_block(X, z, current: ClassKernel, svar: float, rng, restarts: int, fit_noise: bool) -> ClassKernel:
    d = X.shape[1]
    bounds = [tuple(np.log(LENGTHSCALE_BOUNDS))] * d
    bounds.append((math.log(1e-4), math.log(1e4 * svar)))
    if fit_noise:
        bounds.append((math.log(1e-8), math.log(max(svar, 1e-8))))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    start = np.concatenate([np.log(current.lengthscales), [math.log(current.variance)]])
    if fit_noise:
        start = np.append(start, math.log(max(current.noise, 1e-8)))
    starts = [np.clip(start, lo, hi)] + [lo + rng.random(len(lo)) * (hi - lo) for _ in range(restarts - 1)]

    best, best_f, converged = None, np.inf, False
    for x0 in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(_nll, x0, args=(X, z, fit_noise, current.noise), jac=True,
                           method="L-BFGS-B", bounds=bounds)
        if res.fun < best_f:
            best, best_f = res.x, res.fun
        converged |= bool(res.success)
    if best is None or not np.isfinite(best_f) or best_f >= 1e25:
        warnings.warn("kernel fit failed for all starts; keeping current parameters")
        return replace(current)
    if not converged:
        warnings.warn("kernel fit did not converge; using best evaluated point")
    return ClassKernel(np.exp(best[:d]), float(math.exp(best[d])),
                       float(math.exp(best[d + 1])) if fit_noise else current.noise)
