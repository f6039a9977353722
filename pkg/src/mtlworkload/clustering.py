"""K-means clustering and gap-statistic choice of the cluster count."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ParameterError
from .seeding import derive_int, derive_rng

# Rows per block when forming point-to-centroid distances.
_BLOCK = 1 << 16


@dataclass(frozen=True)
class ClusterAssignment:
    centroids: np.ndarray  # (K, D)
    labels: np.ndarray  # (N,)
    inertia: float
    n_iter: int = 0
    converged: bool = True

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


@dataclass(frozen=True)
class GapResult:
    ks: np.ndarray
    gap: np.ndarray
    s: np.ndarray
    log_w: np.ndarray
    log_w_ref: np.ndarray  # mean over reference sets
    k_best: int


def squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """(N, K) squared Euclidean distances, formed from explicit differences.

    The explicit form keeps exact zeros and exact ties, which the expanded
    ``|x|^2 - 2 x.c + |c|^2`` identity does not.
    """
    X = np.asarray(X, dtype=float)
    C = np.asarray(C, dtype=float)
    out = np.empty((X.shape[0], C.shape[0]))
    step = max(1, _BLOCK // max(1, C.shape[0] * max(1, X.shape[1])))
    for start in range(0, X.shape[0], step):
        diff = X[start:start + step, None, :] - C[None, :, :]
        out[start:start + step] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def nearest_cluster(x, centroids) -> int:
    """Index of the closest centroid; ties go to the lowest index."""
    x = np.asarray(x, dtype=float).ravel()
    centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
    if centroids.shape[1] != x.shape[0]:
        raise ParameterError(
            f"point has {x.shape[0]} coordinates, centroids have {centroids.shape[1]}"
        )
    return int(np.argmin(squared_distances(x[None, :], centroids)[0]))


def assign_clusters(X, centroids) -> np.ndarray:
    """Vectorised :func:`nearest_cluster` over the rows of ``X``."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    centroids = np.ascontiguousarray(np.atleast_2d(np.asarray(centroids, dtype=float)))
    if X.shape[1] != centroids.shape[1]:
        raise ParameterError(f"X has {X.shape[1]} columns, centroids have {centroids.shape[1]}")
    return _assign(X, centroids)[0].astype(np.intp)


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = _assign(X, centers[:1])[1]
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[j] = X[idx]
        closest = np.minimum(closest, _assign(X, centers[j:j + 1])[1])
    return centers


@numba.njit(cache=True)
def _assign(X, C):
    """Nearest centroid per row (lowest index on ties) and its squared distance."""
    n, d = X.shape
    k = C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    for i in range(n):
        bj = 0
        bd = np.inf
        for j in range(k):
            s = 0.0
            for f in range(d):
                diff = X[i, f] - C[j, f]
                s += diff * diff
            if s < bd:
                bd = s
                bj = j
        labels[i] = bj
        best[i] = bd
    return labels, best


@numba.njit(cache=True)
def _means(X, labels, k):
    n, d = X.shape
    sums = np.zeros((k, d))
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        counts[labels[i]] += 1
        for f in range(d):
            sums[labels[i], f] += X[i, f]
    for j in range(k):
        if counts[j] > 0:
            for f in range(d):
                sums[j, f] /= counts[j]
    return sums, counts


@numba.njit(cache=True)
def _inertia(X, C, labels):
    total = 0.0
    for i in range(X.shape[0]):
        for f in range(X.shape[1]):
            diff = X[i, f] - C[labels[i], f]
            total += diff * diff
    return total


def _lloyd(X, centers, max_iter, tol):
    k = centers.shape[0]
    prev_inertia = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        labels, _ = _assign(X, centers)
        new, counts = _means(X, labels, k)
        for j in np.flatnonzero(counts == 0):
            # Reseed an empty cluster at the point farthest from its centroid.
            own = np.einsum("nd,nd->n", X - new[labels], X - new[labels])
            far = int(np.argmax(own))
            new[j] = X[far]
            labels[far] = j

        inertia = _inertia(X, new, labels)
        assert inertia <= prev_inertia + 1e-10 * max(1.0, abs(prev_inertia)), (
            f"Lloyd step increased inertia: {prev_inertia} -> {inertia}"
        )
        prev_inertia = inertia

        shift = float(np.sqrt(((new - centers) ** 2).sum()))
        centers = new
        if shift < tol:
            converged = True
            break
    return centers, labels.astype(np.intp), prev_inertia, it, converged


def kmeans(X, k: int, seed=0, max_iter: int = 300, tol: float = 1e-8, n_init: int = 5) -> ClusterAssignment:
    """Lloyd's algorithm from k-means++ seeding, best of ``n_init`` restarts.

    Each restart draws from its own derived stream so the result does not
    depend on the order in which restarts run.
    """
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    n = X.shape[0]
    if int(k) != k or k < 1:
        raise ParameterError(f"k must be a positive integer, got {k}")
    if n < k:
        raise ParameterError(f"need at least k={k} rows, got {n}")
    if n_init < 1:
        raise ParameterError("n_init must be >= 1")

    best = None
    for r in range(n_init):
        rng = derive_rng(seed, "kmeans", k, r)
        centers = _kmeans_pp(X, k, rng)
        out = _lloyd(X, centers, max_iter, tol)
        if best is None or out[2] < best[2]:
            best = out
    centers, labels, inertia, n_iter, converged = best
    return ClusterAssignment(centers, labels, inertia, n_iter, converged)


def gap_statistic(X, k_max: int = 6, B: int = 20, seed=0, n_init: int = 5, max_iter: int = 300) -> GapResult:
    """Choose the number of clusters with the gap statistic.

    Reference sets are drawn uniformly from the feature-wise bounding box of
    ``X``. The chosen ``k`` is the smallest with
    ``gap[k] >= gap[k+1] - s[k+1]``, or ``k_max`` if none qualifies.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if k_max < 2:
        raise ParameterError("k_max must be >= 2")
    if B < 1:
        raise ParameterError("B must be >= 1")
    n, d = X.shape
    k_max = min(int(k_max), n)
    ks = np.arange(1, k_max + 1)

    lo, hi = X.min(axis=0), X.max(axis=0)
    if n < 2 or np.all(hi == lo):
        nan = np.full(len(ks), np.nan)
        return GapResult(ks, nan, nan, nan, nan, 1)

    def log_w(data, k, key):
        w = kmeans(data, int(k), seed=key, max_iter=max_iter, n_init=n_init).inertia
        # Inertia can reach zero once k hits the number of distinct rows.
        return np.log(max(w, np.finfo(float).tiny))

    data_key = derive_int(seed, "gap-data")
    logw = np.array([log_w(X, k, data_key) for k in ks])
    ref = np.empty((B, len(ks)))
    for b in range(B):
        rng = derive_rng(seed, "gap-ref", b)
        sample = lo + rng.random((n, d)) * (hi - lo)
        key = derive_int(seed, "gap-ref-kmeans", b)
        ref[b] = [log_w(sample, k, key) for k in ks]

    ref_mean = ref.mean(axis=0)
    gap = ref_mean - logw
    s = ref.std(axis=0) * np.sqrt(1.0 + 1.0 / B)

    k_best = int(ks[-1])
    for i in range(len(ks) - 1):
        if gap[i] >= gap[i + 1] - s[i + 1]:
            k_best = int(ks[i])
            break
    return GapResult(ks, gap, s, logw, ref_mean, k_best)
