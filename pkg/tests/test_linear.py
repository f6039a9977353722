import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlworkload.errors import DataError, ParameterError
from mtlworkload.linear import (
    LinearModel,
    lambda_grid,
    lasso_cd,
    lasso_fit,
    lasso_lambda_max,
    linear_predict,
    ridge_fit,
)
from oracles import grid_lasso_2d, lasso_objective


def test_ridge_identity_example():
    m = ridge_fit(np.eye(2), [1.0, 0.0], 1.0, fit_intercept=False)
    np.testing.assert_allclose(m.weights, [0.5, 0.0])


def test_ridge_ols_residual_orthogonal():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(30, 4)), rng.normal(size=30)
    m = ridge_fit(X, y, 0.0)
    r = y - m.predict(X)
    np.testing.assert_allclose(X.T @ r, 0, atol=1e-10)
    assert abs(r.sum()) < 1e-10
    assert not m.singular


def test_ridge_large_penalty_shrinks_to_mean():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(20, 3)), rng.normal(size=20) + 5
    m = ridge_fit(X, y, 1e12)
    assert np.abs(m.weights).max() < 1e-9
    np.testing.assert_allclose(m.predict(X), y.mean(), atol=1e-8)


def test_ridge_normal_equations():
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(25, 5)), rng.normal(size=25)
    lam = 0.7
    m = ridge_fit(X, y, lam)
    Xc, yc = X - X.mean(0), y - y.mean()
    assert np.max(np.abs((Xc.T @ Xc + lam * np.eye(5)) @ m.weights - Xc.T @ yc)) < 1e-8


def test_ridge_singular_flagged():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    m = ridge_fit(X, [1.0, 2.0, 3.0], 0.0)
    assert m.singular
    np.testing.assert_allclose(m.weights, [0.5, 0.5])  # minimum-norm solution


def test_negative_penalty():
    with pytest.raises(ParameterError):
        ridge_fit(np.eye(2), [1, 2], -1)
    with pytest.raises(ParameterError):
        lasso_fit(np.eye(2), [1, 2], -1)


def test_lasso_zero_above_lambda_max():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(20, 4)), rng.normal(size=20)
    lm = lasso_lambda_max(X, y)
    assert np.all(lasso_fit(X, y, lm).weights == 0)
    assert np.any(lasso_fit(X, y, 0.9 * lm).weights != 0)


def test_lasso_ols_on_orthonormal():
    Q, _ = np.linalg.qr(np.random.default_rng(4).normal(size=(10, 3)))
    y = np.random.default_rng(5).normal(size=10)
    m = lasso_fit(Q, y, 0.0, fit_intercept=False, tol=1e-14)
    np.testing.assert_allclose(m.weights, Q.T @ y, atol=1e-10)


def test_lasso_soft_threshold_example():
    # Orthonormal design with X'y = (2, 0.3): columns e1, e2.
    X = np.eye(2)
    y = np.array([2.0, 0.3])
    m = lasso_fit(X, y, 0.5, fit_intercept=False)
    np.testing.assert_allclose(m.weights, [1.5, 0.0], atol=1e-12)
    # one-dimensional grid check of the first coordinate
    g = np.arange(-3, 3, 1e-4)
    f = 0.5 * (g - 2.0) ** 2 + 0.5 * np.abs(g)
    assert abs(g[np.argmin(f)] - 1.5) < 1e-4


def test_linear_predict_examples():
    m = LinearModel(np.array([3.0, 4.0]), 1.0, 0.0, "ridge")
    np.testing.assert_array_equal(linear_predict(m, [[1.0, 2.0]]), [12.0])
    np.testing.assert_array_equal(linear_predict(m, np.eye(2)) - 1.0, m.weights)
    zero = LinearModel(np.zeros(2), 2.5, 0.0, "lasso")
    np.testing.assert_array_equal(zero.predict(np.ones((3, 2))), [2.5] * 3)
    with pytest.raises(DataError):
        linear_predict(m, np.ones((1, 3)))


@pytest.mark.parametrize("seed", range(5))
def test_lasso_matches_grid_search(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(15, 2))
    y = X @ rng.uniform(-1.5, 1.5, 2) + 0.3 * rng.normal(size=15)
    lam = rng.uniform(0.1, 0.6) * lasso_lambda_max(X, y)
    w_grid, f_grid = grid_lasso_2d(X, y, lam)
    m = lasso_fit(X, y, lam, tol=1e-12)
    assert np.max(np.abs(m.weights - w_grid)) <= 1e-3
    assert lasso_objective(m.weights, X, y, lam) <= f_grid + 1e-12


def test_lasso_beats_zero_and_ridge():
    rng = np.random.default_rng(6)
    for _ in range(20):
        X, y = rng.normal(size=(12, 5)), rng.normal(size=12)
        lam = rng.uniform(0.01, 1.0) * lasso_lambda_max(X, y)
        w = lasso_fit(X, y, lam).weights
        f = lasso_objective(w, X, y, lam)
        assert f <= lasso_objective(np.zeros(5), X, y, lam) + 1e-10
        assert f <= lasso_objective(ridge_fit(X, y, lam).weights, X, y, lam) + 1e-10


def test_lasso_not_converged_flag():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(10, 6))
    X[:, 1] = X[:, 0] + 1e-6 * rng.normal(size=10)
    m = lasso_fit(X, rng.normal(size=10), 1e-6, max_iter=2)
    assert not m.converged
    assert np.all(np.isfinite(m.weights))


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 10**6), st.floats(0.0, 2.0), st.booleans())
def test_cd_monotone_random(n, d, seed, ratio, collinear):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    if collinear and d > 1:
        X[:, -1] = X[:, 0] * 2.0
    y = rng.normal(size=n)
    lam = ratio * lasso_lambda_max(X, y)
    m = lasso_fit(X, y, lam)  # per-cycle monotonicity asserted inside
    assert np.all(np.isfinite(m.weights))


def test_lasso_cd_stack_independent():
    rng = np.random.default_rng(8)
    G, c = [], []
    for _ in range(3):
        X, y = rng.normal(size=(10, 3)), rng.normal(size=10)
        G.append(X.T @ X)
        c.append(X.T @ y)
    G, c = np.array(G), np.array(c)
    lam = np.array([0.1, 1.0, 5.0])
    W, _, ok = lasso_cd(G, c, lam, tol=1e-12)
    assert ok
    for b in range(3):
        Wb, _, _ = lasso_cd(G[b:b + 1], c[b:b + 1], lam[b], tol=1e-12)
        np.testing.assert_array_equal(W[b], Wb[0])


def test_lambda_grid():
    g = lambda_grid(10.0, 20, 1e-3)
    assert len(g) == 20 and g[0] == 10.0
    assert g[-1] == pytest.approx(1e-2)
    assert np.all(np.diff(g) < 0)
    np.testing.assert_array_equal(lambda_grid(0.0), [0.0])
