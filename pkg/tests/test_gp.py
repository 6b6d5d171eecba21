import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cashomon.gp import (ClassKernel, SurrogateState, block_kernel, default_kernel, fit_hyperparams,
                         kernel_to_json, matern52)
from cashomon.space import CashSpace, ConfigPoint
from oracles import dense_posterior, matern52_scalar, standardization


def random_problem(rng, max_obs=50, standardize=True):
    n_cls = int(rng.integers(1, 4))
    dims = [int(rng.integers(1, 4)) for _ in range(n_cls)]
    kernel = [ClassKernel(rng.uniform(0.2, 1.0, d), float(rng.uniform(0.5, 2.0)), float(rng.uniform(1e-4, 1e-2)))
              for d in dims]
    state = SurrogateState(dims, kernel, standardize=standardize)
    obs = []
    for _ in range(int(rng.integers(1, max_obs + 1))):
        m = int(rng.integers(n_cls))
        x = rng.random(dims[m])
        y = float(rng.normal(3.0, 2.0))
        state.update(m, x, y)
        obs.append(((m, x), y))
    return state, obs, dims, kernel


# -- kernel -----------------------------------------------------------------

def test_matern_zero_distance_is_variance():
    assert matern52([0.3, 0.2], [0.3, 0.2], [0.5, 2.0], 1.7) == pytest.approx(1.7, rel=1e-12)


def test_matern_unit_distance_value():
    expected = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
    assert matern52([0.0], [1.0], [1.0], 1.0) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.52399, abs=1e-5)


def test_matern_decays_monotonically():
    d = np.linspace(0, 20, 200)
    k = [matern52([0.0], [x], [1.0]) for x in d]
    assert np.all(np.diff(k) < 0)
    assert k[-1] < 1e-15


def test_matern_dimension_mismatch():
    with pytest.raises(ValueError):
        matern52([0.0, 1.0], [1.0], [1.0, 1.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.lists(st.floats(0, 1), min_size=3, max_size=3),
       st.lists(st.floats(0.05, 5), min_size=3, max_size=3), st.floats(0.1, 10))
def test_matern_matches_scalar_formula(a, b, ls, v):
    assert matern52(a, b, ls, v) == pytest.approx(matern52_scalar(a, b, ls, v), rel=1e-9, abs=1e-12)


SPACE = CashSpace.from_dict({"classes": [
    {"name": "a", "params": [{"name": "x", "kind": "continuous", "range": [0, 1]},
                             {"name": "y", "kind": "continuous", "range": [0, 1]}]},
    {"name": "b", "params": [{"name": "x", "kind": "continuous", "range": [0, 1]},
                             {"name": "y", "kind": "continuous", "range": [0, 1]}]}]})
KERN = default_kernel(SPACE.dims, lengthscale=0.4, variance=1.3)


def test_block_kernel_cross_class_is_zero():
    p, q = ConfigPoint.make(SPACE, 0, (0.5, 0.5)), ConfigPoint.make(SPACE, 1, (0.5, 0.5))
    assert block_kernel(p, q, KERN) == 0.0


def test_block_kernel_same_point():
    p = ConfigPoint.make(SPACE, 1, (0.1, 0.9))
    assert block_kernel(p, p, KERN) == pytest.approx(1.3, rel=1e-12)


def test_block_kernel_unknown_class():
    p = ConfigPoint.make(SPACE, 1, (0.1, 0.9))
    with pytest.raises(ValueError):
        block_kernel(p, p, KERN[:1])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 1), st.integers(0, 1), st.tuples(st.floats(0, 1), st.floats(0, 1)),
       st.tuples(st.floats(0, 1), st.floats(0, 1)))
def test_block_kernel_symmetric(m1, m2, r1, r2):
    p, q = ConfigPoint.make(SPACE, m1, r1), ConfigPoint.make(SPACE, m2, r2)
    assert block_kernel(p, q, KERN) == block_kernel(q, p, KERN)


def test_kernel_json_dump():
    assert '"lengthscales"' in kernel_to_json(KERN)


# -- posterior --------------------------------------------------------------

def test_prior_posterior():
    state = SurrogateState(SPACE.dims, KERN)
    mean, var = state.posterior(ConfigPoint.make(SPACE, 0, (0.2, 0.3)))
    assert mean == 0.0 and var == pytest.approx(1.3)


def test_noiseless_interpolation():
    kern = [ClassKernel(np.array([0.4, 0.4]), 1.0, 0.0)] * 2
    state = SurrogateState(SPACE.dims, kern, standardize=False)
    p = ConfigPoint.make(SPACE, 0, (0.2, 0.3))
    state.update(p, 4.2)
    mean, var = state.posterior(p)
    assert mean == pytest.approx(4.2, rel=1e-7)
    assert var == pytest.approx(0.0, abs=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.booleans())
def test_posterior_matches_dense_oracle(seed, standardize):
    rng = np.random.default_rng(seed)
    state, obs, dims, kernel = random_problem(rng, standardize=standardize)
    shift, scale = standardization([v for _, v in obs]) if standardize else (0.0, 1.0)
    for _ in range(5):
        m = int(rng.integers(len(dims)))
        x = rng.random(dims[m])
        mean, var = state.predict(m, x)
        om, ov = dense_posterior(obs, (m, x), kernel, shift, scale)
        assert mean[0] == pytest.approx(om, abs=1e-8 * max(1.0, abs(om)))
        assert var[0] == pytest.approx(ov, abs=1e-8 * max(1.0, ov))


def test_update_rejects_non_finite():
    state = SurrogateState(SPACE.dims, KERN)
    with pytest.raises(ValueError):
        state.update(0, np.array([0.1, 0.2]), np.nan)


def test_update_order_invariance():
    rng = np.random.default_rng(4)
    pts = [(int(rng.integers(2)), rng.random(2), float(rng.normal())) for _ in range(8)]
    a = SurrogateState(SPACE.dims, KERN, standardize=False)
    b = SurrogateState(SPACE.dims, KERN, standardize=False)
    for m, x, y in pts:
        a.update(m, x, y)
    for m, x, y in reversed(pts):
        b.update(m, x, y)
    Q = rng.random((20, 2))
    for m in range(2):
        np.testing.assert_allclose(a.predict(m, Q), b.predict(m, Q), atol=1e-8)


def test_update_never_raises_variance():
    rng = np.random.default_rng(5)
    state = SurrogateState(SPACE.dims, KERN, standardize=False)
    Q = rng.random((100, 2))
    prev = [state.predict(m, Q)[1] for m in range(2)]
    for _ in range(30):
        state.update(int(rng.integers(2)), rng.random(2), float(rng.normal()))
        cur = [state.predict(m, Q)[1] for m in range(2)]
        for p, c in zip(prev, cur):
            assert np.all(c <= p + 1e-12)
            assert np.all(c >= 0)
        prev = cur


def test_block_independence():
    rng = np.random.default_rng(6)
    state = SurrogateState(SPACE.dims, KERN, standardize=False)
    for _ in range(5):
        state.update(0, rng.random(2), float(rng.normal()))
    Q = rng.random((10, 2))
    before = state.predict(0, Q)
    for _ in range(5):
        state.update(1, rng.random(2), float(rng.normal()))
    np.testing.assert_array_equal(before[0], state.predict(0, Q)[0])
    np.testing.assert_array_equal(before[1], state.predict(0, Q)[1])


# -- lookahead --------------------------------------------------------------

def test_lookahead_same_point_noiseless():
    kern = [ClassKernel(np.array([0.4, 0.4]), 1.0, 0.0)] * 2
    state = SurrogateState(SPACE.dims, kern, standardize=False)
    state.update(0, np.array([0.9, 0.9]), 1.0)
    p = ConfigPoint.make(SPACE, 0, (0.2, 0.3))
    assert state.lookahead_variance(p, p) == pytest.approx(0.0, abs=1e-7)


def test_lookahead_cross_class_unchanged():
    rng = np.random.default_rng(7)
    state = SurrogateState(SPACE.dims, KERN)
    for _ in range(6):
        state.update(int(rng.integers(2)), rng.random(2), float(rng.normal()))
    c, t = ConfigPoint.make(SPACE, 0, (0.2, 0.3)), ConfigPoint.make(SPACE, 1, (0.2, 0.3))
    assert state.lookahead_variance(c, t) == state.posterior(t)[1]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_lookahead_matches_append_and_recompute(seed):
    rng = np.random.default_rng(seed)
    state, obs, dims, kernel = random_problem(rng, standardize=False)
    for _ in range(5):
        mc, mt = int(rng.integers(len(dims))), int(rng.integers(len(dims)))
        xc, xt = rng.random(dims[mc]), rng.random(dims[mt])
        sp = CashSpace.from_dict({"classes": [
            {"name": f"c{m}", "params": [{"name": f"p{j}", "kind": "continuous", "range": [0, 1]}
                                         for j in range(d)]} for m, d in enumerate(dims)]})
        cand, tgt = ConfigPoint.make(sp, mc, tuple(xc)), ConfigPoint.make(sp, mt, tuple(xt))
        got = state.lookahead_variance(cand, tgt)
        _, expected = dense_posterior(obs + [((mc, xc), 123.0)], (mt, xt), kernel)
        assert got == pytest.approx(expected, abs=1e-8)


def test_lookahead_degenerate_flag():
    kern = [ClassKernel(np.array([0.4, 0.4]), 1e-5, 0.0)] * 2
    state = SurrogateState(SPACE.dims, kern, standardize=False)
    x = np.array([0.5, 0.5])
    state.update(0, x, 0.0)
    after, flag = state.lookahead_matrix(0, x, np.array([[0.4, 0.5]]))
    assert flag[0]
    np.testing.assert_array_equal(after[0], state.predict_std(0, np.array([[0.4, 0.5]]))[1])


# -- hyperparameter fitting -------------------------------------------------

def sample_gp(rng, n, ls, noise=1e-4):
    X = rng.random((n, 1))
    K = matern52(X, X, [ls], 1.0) + noise * np.eye(n)
    return X, np.linalg.cholesky(K) @ rng.standard_normal(n)


def test_fit_recovers_lengthscale():
    rng = np.random.default_rng(0)
    X, y = sample_gp(rng, 200, 0.3)
    state = SurrogateState([1], standardize=False)
    for x, v in zip(X, y):
        state.update(0, x, v)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        (k,) = fit_hyperparams(state, seed=0)
    assert 0.15 <= k.lengthscales[0] <= 0.6


def test_fit_leaves_sparse_classes_at_defaults_and_is_seeded():
    rng = np.random.default_rng(1)
    X, y = sample_gp(rng, 40, 0.3)
    states = []
    for _ in range(2):
        s = SurrogateState([1, 1])
        for x, v in zip(X, y):
            s.update(0, x, v)
        s.update(1, np.array([0.5]), 0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s.fit(seed=11)
        states.append(s)
    assert states[0].kernel[1].to_dict() == default_kernel([1, 1])[1].to_dict()
    assert states[0].kernel[0].to_dict() == states[1].kernel[0].to_dict()


def test_fit_constant_observations_kills_signal_variance():
    state = SurrogateState([1])
    for x in np.linspace(0, 1, 10):
        state.update(0, np.array([x]), 2.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        (k,) = state.fit(seed=0)
    assert k.variance <= 1e-3
    mean, var = state.predict(0, np.array([[0.33]]))
    assert mean[0] == pytest.approx(2.5, abs=1e-6)
