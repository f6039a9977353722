import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlworkload.clustering import assign_clusters, gap_statistic, kmeans, nearest_cluster
from mtlworkload.errors import ParameterError
from oracles import best_two_partition

PTS = np.array([[0.0], [1.0], [10.0], [11.0]])


def blobs(n_per, centers, sigma, seed):
    rng = np.random.default_rng(seed)
    return np.vstack([c + sigma * rng.standard_normal((n_per, len(c))) for c in np.asarray(centers, float)])


def test_four_points_two_clusters():
    oracle_inertia, oracle_centers = best_two_partition(PTS[:, 0])
    assert oracle_inertia == 1.0 and oracle_centers == [0.5, 10.5]
    res = kmeans(PTS, 2, seed=0)
    assert res.inertia == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.sort(res.centroids[:, 0]), oracle_centers)


def test_k1_is_global_mean():
    X = np.random.default_rng(0).normal(size=(30, 3))
    res = kmeans(X, 1)
    np.testing.assert_allclose(res.centroids[0], X.mean(axis=0))
    assert res.inertia == pytest.approx(((X - X.mean(axis=0)) ** 2).sum())


def test_k_equals_n():
    X = np.random.default_rng(1).normal(size=(6, 2))
    res = kmeans(X, 6)
    assert res.inertia == pytest.approx(0.0, abs=1e-24)
    assert len(set(res.labels.tolist())) == 6


def test_n_below_k():
    with pytest.raises(ParameterError):
        kmeans(PTS, 5)


def test_centroids_are_member_means():
    X = blobs(30, [[0, 0], [5, 5], [0, 5]], 1.0, 2)
    res = kmeans(X, 3, seed=4)
    assert res.converged
    for j in range(3):
        np.testing.assert_allclose(res.centroids[j], X[res.labels == j].mean(axis=0), atol=1e-8)
    assert np.all(res.labels < 3) and res.inertia >= 0


def test_better_than_random_assignments():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(80, 2))
    res = kmeans(X, 4, seed=0)
    for _ in range(100):
        lab = rng.integers(4, size=80)
        inertia = sum(((X[lab == j] - X[lab == j].mean(axis=0)) ** 2).sum() for j in range(4) if np.any(lab == j))
        assert res.inertia <= inertia


def test_kmeans_deterministic():
    X = np.random.default_rng(6).normal(size=(50, 2))
    a, b = kmeans(X, 3, seed=9), kmeans(X, 3, seed=9)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_duplicate_points_keep_k_clusters():
    # Fewer distinct rows than k forces the empty-cluster path.
    X = np.array([[0.0], [0.0], [0.0], [1.0], [1.0]])
    res = kmeans(X, 3, seed=0)
    assert res.centroids.shape == (3, 1)
    assert res.inertia == pytest.approx(0.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 4), st.integers(1, 5), st.integers(0, 10**6), st.booleans())
def test_lloyd_monotone_on_random_data(n, d, k, seed, rounded):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    if rounded:
        X = np.round(X)  # many ties and duplicates
    if n < k:
        return
    res = kmeans(X, k, seed=seed)  # asserts monotonicity per Lloyd step internally
    assert np.isfinite(res.inertia)


def test_nearest_cluster_examples():
    C = np.array([[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]])
    assert nearest_cluster([5.0, 5.0], C) == 2
    assert nearest_cluster([1.0, 0.0], C) == 0  # equidistant from 0 and 1
    assert nearest_cluster([4.0], [[0.0], [10.0]]) == 0


def test_nearest_cluster_dimension_mismatch():
    with pytest.raises(ParameterError):
        nearest_cluster([1.0, 2.0], [[0.0]])


def test_assign_clusters_matches_nearest():
    rng = np.random.default_rng(7)
    X = np.round(rng.normal(size=(40, 2)))
    C = np.round(rng.normal(size=(4, 2)))
    np.testing.assert_array_equal(assign_clusters(X, C), [nearest_cluster(x, C) for x in X])


def test_gap_three_blobs():
    X = blobs(100, [[0, 0], [10, 0], [5, 9]], 0.5, 0)
    assert gap_statistic(X, k_max=6, B=10, seed=0).k_best == 3


def test_gap_constant_input():
    res = gap_statistic(np.ones((20, 2)), k_max=4)
    assert res.k_best == 1


def test_gap_deterministic():
    X = blobs(40, [[0, 0], [6, 0]], 1.0, 3)
    a, b = gap_statistic(X, 4, 5, seed=2), gap_statistic(X, 4, 5, seed=2)
    np.testing.assert_array_equal(a.gap, b.gap)
    assert a.k_best == b.k_best


def test_gap_rule():
    X = blobs(40, [[0, 0], [6, 0]], 1.0, 4)
    res = gap_statistic(X, 5, 8, seed=1)
    qualifying = [k for i, k in enumerate(res.ks[:-1]) if res.gap[i] >= res.gap[i + 1] - res.s[i + 1]]
    assert res.k_best == (qualifying[0] if qualifying else res.ks[-1])


def test_gap_bad_params():
    with pytest.raises(ParameterError):
        gap_statistic(PTS, k_max=1)
    with pytest.raises(ParameterError):
        gap_statistic(PTS, B=0)
