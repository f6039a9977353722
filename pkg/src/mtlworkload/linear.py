"""Lasso and ridge regression.

Both solvers work on Gram matrices so that a stack of independent problems
(one per task, say) can be solved in one vectorised pass. The single-problem
functions :func:`ridge_fit` and :func:`lasso_fit` are thin wrappers over a
stack of size one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import DataError, ParameterError

LASSO = "lasso"
RIDGE = "ridge"


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    intercept: float
    penalty: float
    kind: str
    converged: bool = True
    singular: bool = False
    n_iter: int = 0

    def predict(self, X) -> np.ndarray:
        return linear_predict(self, X)


def linear_predict(model: LinearModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.weights.shape[0]:
        raise DataError(f"X has {X.shape[1]} columns, model expects {model.weights.shape[0]}")
    return X @ model.weights + model.intercept


# ---------------------------------------------------------------------------
# Gram helpers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupedGram:
    """Per-group sufficient statistics of (optionally centred) data.

    ``G[g] = Xc_g' Xc_g``, ``c[g] = Xc_g' yc_g`` and ``yy[g] = yc_g' yc_g``,
    where ``Xc_g, yc_g`` are group ``g``'s rows minus the group means.
    """

    G: np.ndarray  # (B, D, D)
    c: np.ndarray  # (B, D)
    yy: np.ndarray  # (B,)
    x_mean: np.ndarray  # (B, D)
    y_mean: np.ndarray  # (B,)
    counts: np.ndarray  # (B,)


def grouped_gram(X, y, groups=None, n_groups=None, center=True) -> GroupedGram:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if groups is None:
        groups = np.zeros(X.shape[0], dtype=np.intp)
        n_groups = 1
    groups = np.asarray(groups, dtype=np.intp)
    if n_groups is None:
        n_groups = int(groups.max()) + 1 if len(groups) else 0
    D = X.shape[1]
    G = np.zeros((n_groups, D, D))
    c = np.zeros((n_groups, D))
    yy = np.zeros(n_groups)
    xm = np.zeros((n_groups, D))
    ym = np.zeros(n_groups)
    counts = np.bincount(groups, minlength=n_groups)

    order = np.argsort(groups, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(counts)])
    for g in range(n_groups):
        if counts[g] == 0:
            continue
        rows = order[bounds[g]:bounds[g + 1]]
        Xg, yg = X[rows], y[rows]
        if center:
            xm[g] = Xg.mean(axis=0)
            ym[g] = yg.mean()
            Xg = Xg - xm[g]
            yg = yg - ym[g]
        G[g] = Xg.T @ Xg
        c[g] = Xg.T @ yg
        yy[g] = yg @ yg
    return GroupedGram(G, c, yy, xm, ym, counts)


def _check_xy(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
    if X.shape[0] < 1:
        raise DataError("need at least one sample")
    return X, y


# ---------------------------------------------------------------------------
# Ridge
# ---------------------------------------------------------------------------


def ridge_solve(G, c, lam):
    """Solve ``(G_b + lam_b I) w_b = c_b`` for a stack of problems.

    Returns ``(W, singular)``. Where the system is singular (only possible
    at ``lam_b == 0``) the minimum-norm solution is used and flagged.
    """
    G = np.asarray(G, dtype=float)
    c = np.asarray(c, dtype=float)
    B, D, _ = G.shape
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (B,))
    if np.any(lam < 0):
        raise ParameterError("penalty must be >= 0")
    A = G + lam[:, None, None] * np.eye(D)
    singular = np.zeros(B, dtype=bool)
    zero = np.flatnonzero(lam == 0)
    if len(zero):
        ranks = np.linalg.matrix_rank(A[zero], hermitian=True)
        singular[zero[ranks < D]] = True
    W = np.zeros((B, D))
    ok = ~singular
    if ok.any():
        W[ok] = np.linalg.solve(A[ok], c[ok][..., None])[..., 0]
    if singular.any():
        W[singular] = np.einsum("bij,bj->bi", np.linalg.pinv(A[singular], hermitian=True), c[singular])
    return W, singular


def ridge_fit(X, y, lam: float, fit_intercept: bool = True) -> LinearModel:
    """Ridge regression on centred data.

    Minimises ``0.5 * |y - X w|^2 + 0.5 * lam * |w|^2``, i.e. solves
    ``(X'X + lam I) w = X'y``; the intercept is recovered from the means.
    """
    X, y = _check_xy(X, y)
    if lam < 0:
        raise ParameterError("penalty must be >= 0")
    gram = grouped_gram(X, y, center=fit_intercept)
    W, singular = ridge_solve(gram.G, gram.c, lam)
    w = W[0]
    b = float(gram.y_mean[0] - gram.x_mean[0] @ w) if fit_intercept else 0.0
    return LinearModel(w, b, float(lam), RIDGE, singular=bool(singular[0]))


# ---------------------------------------------------------------------------
# Lasso
# ---------------------------------------------------------------------------


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def lasso_objective_gram(W, G, c, yy, lam):
    """``0.5 |y - Xw|^2 + lam |w|_1`` per problem, from Gram statistics."""
    W = np.atleast_2d(W)
    quad = np.einsum("bi,bij,bj->b", W, G, W)
    return 0.5 * (quad - 2 * np.einsum("bi,bi->b", c, W) + yy) + lam * np.abs(W).sum(axis=1)


@numba.njit(cache=True)
def _cd_kernel(G, c, lam, W, yy, tol, max_iter):
    """Coordinate descent on each problem in turn; updates ``W`` in place.

    Returns per-problem cycle counts, convergence flags and the largest
    objective increase seen over any cycle (relative to a rounding scale).
    """
    B, D = c.shape
    cycles = np.zeros(B, dtype=np.int64)
    conv = np.zeros(B, dtype=np.bool_)
    worst = -np.inf
    g = np.empty(D)
    for b in range(B):
        w = W[b]
        Gb = G[b]
        for i in range(D):
            s = 0.0
            for j in range(D):
                s += Gb[i, j] * w[j]
            g[i] = s
        obj = _obj(w, g, c[b], yy[b], lam[b])
        for it in range(1, max_iter + 1):
            max_step = 0.0
            for d in range(D):
                gdd = Gb[d, d]
                old = w[d]
                if gdd > 0:
                    z = c[b, d] - g[d] + gdd * old
                    a = abs(z) - lam[b]
                    new = (a if a > 0 else 0.0) * (1.0 if z > 0 else -1.0) / gdd
                else:
                    new = 0.0
                delta = new - old
                if delta != 0.0:
                    w[d] = new
                    for i in range(D):
                        g[i] += Gb[i, d] * delta
                    if abs(delta) > max_step:
                        max_step = abs(delta)
            new_obj = _obj(w, g, c[b], yy[b], lam[b])
            scale = 1.0 + abs(new_obj)
            for i in range(D):
                scale += abs(0.5 * g[i] * w[i]) + abs(c[b, i] * w[i])
            rise = (new_obj - obj) / scale
            if rise > worst:
                worst = rise
            obj = new_obj
            cycles[b] = it
            if max_step < tol:
                conv[b] = True
                break
    return cycles, conv, worst


@numba.njit(cache=True)
def _obj(w, g, c, yy, lam):
    quad = 0.0
    lin = 0.0
    l1 = 0.0
    for i in range(w.shape[0]):
        quad += w[i] * g[i]
        lin += c[i] * w[i]
        l1 += abs(w[i])
    return 0.5 * (quad - 2.0 * lin + yy) + lam * l1


def lasso_cd(G, c, lam, W0=None, tol: float = 1e-8, max_iter: int = 10000, yy=None):
    """Cyclic coordinate descent for a stack of lasso problems.

    Minimises ``0.5 w'G_b w - c_b'w + lam_b |w|_1`` for every ``b``.
    Problem ``b`` stops once the largest coordinate change in a full cycle
    is below ``tol``.

    Returns ``(W, n_iter, converged)`` where ``n_iter`` is the largest cycle
    count over the stack and ``converged`` is True when every problem
    converged.
    """
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    B, D, _ = G.shape
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (B,)).copy()
    if np.any(lam < 0):
        raise ParameterError("penalty must be >= 0")
    yy = np.zeros(B) if yy is None else np.ascontiguousarray(yy, dtype=float)
    W = np.zeros((B, D)) if W0 is None else np.array(W0, dtype=float, copy=True).reshape(B, D)
    if B == 0 or D == 0:
        return W, 0, True
    cycles, conv, worst = _cd_kernel(G, c, lam, W, yy, float(tol), int(max_iter))
    assert worst <= 1e-10, f"coordinate descent cycle increased the objective ({worst:.3g} relative)"
    return W, int(cycles.max()), bool(conv.all())


def lasso_lambda_max(X, y, fit_intercept: bool = True) -> float:
    """Smallest penalty at which the all-zero solution is optimal."""
    X, y = _check_xy(X, y)
    if fit_intercept:
        X = X - X.mean(axis=0)
        y = y - y.mean()
    return float(np.max(np.abs(X.T @ y))) if X.shape[1] else 0.0


def lasso_fit(
    X,
    y,
    lam: float,
    tol: float = 1e-8,
    max_iter: int = 10000,
    fit_intercept: bool = True,
    w0=None,
) -> LinearModel:
    """Lasso by cyclic coordinate descent with soft-thresholding.

    Minimises ``0.5 * |y - X w|^2 + lam * |w|_1`` on centred data. If
    ``max_iter`` cycles pass without convergence the last iterate is returned
    with ``converged=False``.
    """
    X, y = _check_xy(X, y)
    if lam < 0:
        raise ParameterError("penalty must be >= 0")
    gram = grouped_gram(X, y, center=fit_intercept)
    W, n_iter, converged = lasso_cd(
        gram.G, gram.c, lam, None if w0 is None else np.asarray(w0)[None, :], tol, max_iter, yy=gram.yy
    )
    w = W[0]
    b = float(gram.y_mean[0] - gram.x_mean[0] @ w) if fit_intercept else 0.0
    return LinearModel(w, b, float(lam), LASSO, converged=converged, n_iter=n_iter)


def lambda_grid(lam_max: float, n: int = 20, ratio: float = 1e-3) -> np.ndarray:
    """Descending log-spaced grid from ``lam_max`` to ``lam_max * ratio``."""
    if lam_max <= 0:
        return np.zeros(1)
    return np.geomspace(lam_max, lam_max * ratio, n)
