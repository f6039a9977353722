"""CART regression trees and random forests."""

from __future__ import annotations

import math

import numba
import numpy as np

from .errors import DataError, ParameterError
from .seeding import derive_rng

# A split must cut node SSE by more than this fraction to count; smaller
# "gains" are rounding noise.
_MIN_REL_GAIN = 1e-10


class RegressionTree:
    """Binary regression tree stored as flat node arrays.

    Leaves have ``feature == -1``. Every node (internal ones included) keeps
    the mean and count of its training rows, which lets :meth:`predict`
    evaluate the tree truncated at a smaller depth.
    """

    def __init__(self, feature, threshold, left, right, value, count, depth,
                 n_features, max_depth=None, min_samples_leaf=1):
        self.feature = np.asarray(feature, dtype=np.intp)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.intp)
        self.right = np.asarray(right, dtype=np.intp)
        self.value = np.asarray(value, dtype=float)
        self.count = np.asarray(count, dtype=np.intp)
        self.depth = np.asarray(depth, dtype=np.intp)
        self.n_features = int(n_features)
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def leaf_depths(self) -> np.ndarray:
        return self.depth[self.is_leaf()]

    def predict(self, X, max_depth=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DataError(f"X has {X.shape[1]} columns, tree expects {self.n_features}")
        node = np.zeros(X.shape[0], dtype=np.intp)
        limit = np.iinfo(np.intp).max if max_depth is None else max_depth
        active = np.flatnonzero((self.feature[node] >= 0) & (self.depth[node] < limit))
        while len(active):
            nd = node[active]
            go_left = X[active, self.feature[nd]] < self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            nd = node[active]
            active = active[(self.feature[nd] >= 0) & (self.depth[nd] < limit)]
        return self.value[node]

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "feature": self.feature, "threshold": self.threshold, "left": self.left,
            "right": self.right, "value": self.value, "count": self.count, "depth": self.depth,
        }

    @classmethod
    def from_arrays(cls, arrays, n_features, max_depth=None, min_samples_leaf=1):
        return cls(arrays["feature"], arrays["threshold"], arrays["left"], arrays["right"],
                   arrays["value"], arrays["count"], arrays["depth"], n_features,
                   max_depth, min_samples_leaf)


def _check(X, y, max_depth, min_samples_leaf):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
    if X.shape[0] < 1:
        raise DataError("need at least one sample")
    if max_depth is not None and max_depth < 0:
        raise ParameterError("max_depth must be >= 0 or None")
    if min_samples_leaf < 1:
        raise ParameterError("min_samples_leaf must be >= 1")
    return X, y


@numba.njit(cache=True)
def _best_split(X, y, order, feats, min_leaf):
    """Best (gain, feature, threshold) over ``feats`` for one node.

    ``order[:, f]`` lists the node's rows sorted by feature ``f``. The SSE
    reduction of a split is ``n_l * n_r / n * (mean_l - mean_r)^2``; ties go
    to the first feature in ``feats`` and then to the lowest threshold.
    """
    n = order.shape[0]
    total = 0.0
    for i in range(n):
        total += y[order[i, 0]]
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    for f in feats:
        col = order[:, f]
        left = 0.0
        for i in range(n - 1):
            left += y[col[i]]
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            lo = X[col[i], f]
            hi = X[col[i + 1], f]
            if not hi > lo:
                continue
            right = total - left
            diff = left / nl - right / nr
            gain = nl * nr / n * diff * diff
            if gain > best_gain:
                best_gain = gain
                best_f = f
                thr = 0.5 * (lo + hi)
                best_thr = thr if lo < thr else hi
    return best_gain, best_f, best_thr


@numba.njit(cache=True)
def _partition(X, order, f, thr):
    """Stable split of every sorted column into rows left / right of ``thr``."""
    n, D = order.shape
    n_left = 0
    for i in range(n):
        if X[order[i, 0], f] < thr:
            n_left += 1
    left = np.empty((n_left, D), dtype=order.dtype)
    right = np.empty((n - n_left, D), dtype=order.dtype)
    for d in range(D):
        li = 0
        ri = 0
        for i in range(n):
            r = order[i, d]
            if X[r, f] < thr:
                left[li, d] = r
                li += 1
            else:
                right[ri, d] = r
                ri += 1
    return left, right


@numba.njit(cache=True)
def _expand_order(order, start, cnt):
    """Per-column sort order of a sorted bootstrap sample.

    ``order`` is the stable per-column argsort of the full data; row ``r``
    appears ``cnt[r]`` times in the sample, at positions ``start[r]`` on.
    """
    n, D = order.shape
    m = cnt.sum()
    out = np.empty((m, D), dtype=np.int64)
    for d in range(D):
        k = 0
        for i in range(n):
            r = order[i, d]
            for j in range(cnt[r]):
                out[k, d] = start[r] + j
                k += 1
    return out


def _grow(X, y, max_depth, min_samples_leaf, m_try, rng, order=None) -> RegressionTree:
    n, D = X.shape
    feature, threshold, left, right, value, count, depth = [], [], [], [], [], [], []

    def new_node(rows, d):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[rows].mean()))
        count.append(len(rows))
        depth.append(d)
        return len(feature) - 1

    X = np.ascontiguousarray(X)
    if order is None:
        order = np.argsort(X, axis=0, kind="stable").astype(np.int64)
    all_feats = np.arange(D, dtype=np.int64)
    root = new_node(order[:, 0], 0)
    stack = [(root, order)]
    while stack:
        node, order_node = stack.pop()
        rows = order_node[:, 0]
        yn = y[rows]
        d = depth[node]
        nn = len(rows)
        if (max_depth is not None and d >= max_depth) or nn < 2 * min_samples_leaf:
            continue
        if yn.max() == yn.min():
            continue
        sse = float(((yn - yn.mean()) ** 2).sum())

        if m_try < D:
            feats = np.sort(rng.choice(D, size=m_try, replace=False)).astype(np.int64)
        else:
            feats = all_feats
        gain, f, thr = _best_split(X, y, order_node, feats, min_samples_leaf)
        if f < 0 or gain <= _MIN_REL_GAIN * sse:
            continue

        left_order, right_order = _partition(X, order_node, f, thr)
        yl, yr = y[left_order[:, 0]], y[right_order[:, 0]]
        child_sse = float(((yl - yl.mean()) ** 2).sum() + ((yr - yr.mean()) ** 2).sum())
        assert child_sse < sse, f"split did not reduce SSE ({sse} -> {child_sse})"

        feature[node] = int(f)
        threshold[node] = float(thr)
        li = new_node(left_order[:, 0], d + 1)
        ri = new_node(right_order[:, 0], d + 1)
        left[node], right[node] = li, ri
        stack.append((ri, right_order))
        stack.append((li, left_order))

    return RegressionTree(feature, threshold, left, right, value, count, depth, D,
                          max_depth, min_samples_leaf)


def tree_fit(X, y, max_depth=8, min_samples_leaf: int = 5, seed=0, m_try=None) -> RegressionTree:
    """Greedy CART fit minimising the summed squared error of the children.

    ``max_depth=None`` grows until leaves are pure or too small to split.
    ``seed`` only matters when ``m_try`` restricts the features tried per
    split.
    """
    X, y = _check(X, y, max_depth, min_samples_leaf)
    D = X.shape[1]
    m_try = D if m_try is None else int(m_try)
    if not 1 <= m_try <= max(D, 1):
        raise ParameterError(f"m_try must be in [1, {D}], got {m_try}")
    rng = derive_rng(seed, "tree")
    return _grow(X, y, max_depth, min_samples_leaf, m_try, rng)


def tree_predict(model: RegressionTree, X) -> np.ndarray:
    return model.predict(X)


class RandomForest:
    def __init__(self, trees, m_try, seed, bootstrap=True):
        self.trees = list(trees)
        self.m_try = m_try
        self.seed = seed
        self.bootstrap = bootstrap

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def predict(self, X, max_depth=None) -> np.ndarray:
        return np.mean(np.stack([t.predict(X, max_depth) for t in self.trees]), axis=0)


def default_m_try(n_features: int) -> int:
    return max(1, math.ceil(n_features / 3))


def forest_fit(
    X,
    y,
    n_trees: int = 100,
    m_try=None,
    max_depth=8,
    min_samples_leaf: int = 5,
    seed=0,
    bootstrap: bool = True,
) -> RandomForest:
    """Bagged CART trees with ``m_try`` features sampled at every split.

    Tree ``i`` draws its bootstrap sample and feature subsets from a stream
    derived from ``(seed, i)``, so trees are independent of fitting order.
    """
    X, y = _check(X, y, max_depth, min_samples_leaf)
    n, D = X.shape
    if n_trees < 1:
        raise ParameterError("n_trees must be >= 1")
    m_try = default_m_try(D) if m_try is None else int(m_try)
    if not 1 <= m_try <= max(D, 1):
        raise ParameterError(f"m_try must be in [1, {D}], got {m_try}")
    X = np.ascontiguousarray(X)
    full_order = np.argsort(X, axis=0, kind="stable").astype(np.int64)
    trees = []
    for i in range(n_trees):
        rng = derive_rng(seed, "forest", i)
        if bootstrap:
            # A sorted sample lets the tree reuse the full data's sort order.
            sample = np.sort(rng.integers(n, size=n))
            cnt = np.bincount(sample, minlength=n)
            start = np.concatenate([[0], np.cumsum(cnt)[:-1]])
            order = _expand_order(full_order, start, cnt)
        else:
            sample = np.arange(n)
            order = full_order
        trees.append(_grow(X[sample], y[sample], max_depth, min_samples_leaf, m_try, rng, order))
    return RandomForest(trees, m_try, seed, bootstrap)


def forest_predict(model: RandomForest, X) -> np.ndarray:
    return model.predict(X)
