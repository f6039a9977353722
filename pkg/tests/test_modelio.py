import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mtlworkload.clustering import kmeans
from mtlworkload.data import MultiTaskDataset, RecordTable, preprocess
from mtlworkload.errors import SchemaError
from mtlworkload.linear import lasso_fit, ridge_fit
from mtlworkload.modelio import dumps, loads, model_from_text, model_to_text, write_atomic
from mtlworkload.mtl import MtlFitConfig, mtl_fit
from mtlworkload.pipeline import (
    RegressorSpec,
    default_specs,
    fit_cluster_based,
    fit_per_task,
    fit_regressor,
    predict_cluster_based,
)
from mtlworkload.trees import forest_fit, tree_fit


def _data(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 3))
    return X, X @ [1.0, -2.0, 0.5] + np.sin(X[:, 0]) + 0.1 * rng.normal(size=60)


def _round_trip(model):
    back, _, _ = model_from_text(model_to_text(model))
    return back


@pytest.mark.parametrize("fit", [
    lambda X, y: ridge_fit(X, y, 0.3),
    lambda X, y: lasso_fit(X, y, 0.5),
    lambda X, y: tree_fit(X, y, max_depth=4),
    lambda X, y: forest_fit(X, y, n_trees=3, seed=1),
    lambda X, y: fit_regressor(RegressorSpec("forest", {"n_trees": 2}), X, y),
    lambda X, y: fit_regressor(RegressorSpec("lasso"), X[:2], y[:2]),
])
def test_regressors_round_trip_bit_exact(fit):
    X, y = _data()
    m = fit(X, y)
    back = _round_trip(m)
    np.testing.assert_array_equal(back.predict(X), m.predict(X))
    assert model_to_text(back) == model_to_text(m)


def test_mtl_round_trip():
    rng = np.random.default_rng(1)
    ds = MultiTaskDataset.from_tasks([(lab, rng.normal(size=(8, 3)), rng.normal(size=8)) for lab in ("a b", "c,d")])
    m, _ = mtl_fit(ds, MtlFitConfig(lam=0.5))
    back = _round_trip(m)
    np.testing.assert_array_equal(back.W, m.W)
    np.testing.assert_array_equal(back.intercepts, m.intercepts)
    assert back.task_labels == m.task_labels


def test_cluster_and_per_task_round_trip():
    X, y = _data(2)
    specs = default_specs(("ridge", "tree"))
    cb = fit_cluster_based(X, y, k=2, specs=specs, seed=0)
    back = _round_trip(cb)
    for s in specs:
        np.testing.assert_array_equal(predict_cluster_based(back, X, s.method), predict_cluster_based(cb, X, s.method))
    ds = MultiTaskDataset.from_tasks([("a", X[:30], y[:30]), ("b", X[30:], y[30:])])
    pt = fit_per_task(ds, specs, seed=0)
    back = _round_trip(pt)
    np.testing.assert_array_equal(back.predict(ds.X, ds.task, "tree"), pt.predict(ds.X, ds.task, "tree"))


def test_kmeans_round_trip():
    X, _ = _data(3)
    a = kmeans(X, 3)
    b = _round_trip(a)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_preprocess_and_meta_round_trip():
    raw = RecordTable({"task_id": "task_id", "v": "numeric", "target": "target"},
                      {"task_id": ["a", "b", "a"], "v": np.array([1.0, np.nan, 3.0]), "target": np.array([1.0, 2, 3])})
    ds, spec = preprocess(raw)
    m = ridge_fit(ds.X, ds.y, 1.0)
    text = model_to_text(m, spec, {"approach": "single", "labels": ["a", "b"]})
    _, spec2, meta = model_from_text(text)
    assert spec2 == spec and meta == {"approach": "single", "labels": ["a", "b"]}


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, min_side=0, max_side=4),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_array_round_trip(a):
    h, arrays = loads(dumps({"x": 1}, {"a": a}))
    assert h == {"x": 1}
    assert arrays["a"].shape == a.shape
    np.testing.assert_array_equal(arrays["a"], a)


def test_bad_files():
    with pytest.raises(SchemaError):
        loads("hello\n")
    with pytest.raises(SchemaError):
        model_from_text(dumps({"model.type": "mystery"}, {}))


def test_write_atomic(tmp_path):
    p = tmp_path / "f.txt"
    write_atomic(p, "one")
    write_atomic(p, "two")
    assert p.read_text() == "two"
    assert [x.name for x in tmp_path.iterdir()] == ["f.txt"]
