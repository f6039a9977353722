"""Plain-text persistence for fitted models.

A model file is a header of ``key = <json value>`` lines followed by array
blocks::

    @array <name> <dtype> <dim> [<dim> ...]
    <one line per row, values separated by spaces>

Floats are written with ``repr`` so every value reads back bit-for-bit.
Nested models (forest trees, per-cluster regressors) use dotted key and
array-name prefixes.
"""

from __future__ import annotations

import ast
import json
import os
import tempfile

import numpy as np

from .clustering import ClusterAssignment
from .data import PreprocessSpec
from .errors import SchemaError
from .linear import LinearModel
from .mtl import WeightMatrix
from .pipeline import ClusterBasedModel, ConstantModel, FittedRegressor, PerTaskModel, RegressorSpec
from .trees import RandomForest, RegressionTree

MAGIC = "# mtlworkload model file v1"


# ---------------------------------------------------------------------------
# Raw format
# ---------------------------------------------------------------------------


def _fmt_row(row, is_float):
    return " ".join(repr(float(v)) if is_float else str(int(v)) for v in row)


def dumps(header: dict, arrays: dict) -> str:
    lines = [MAGIC]
    for k, v in header.items():
        if "\n" in k or " = " in k:
            raise SchemaError(f"bad header key {k!r}")
        lines.append(f"{k} = {json.dumps(v)}")
    for name, a in arrays.items():
        a = np.asarray(a)
        is_float = a.dtype.kind == "f"
        dtype = "float64" if is_float else "int64"
        lines.append(f"@array {name} {dtype} " + " ".join(str(s) for s in a.shape))
        if a.ndim == 0:
            lines.append(_fmt_row([a.item()], is_float))
        elif a.ndim == 1:
            lines.append(_fmt_row(a, is_float))
        else:
            for row in a.reshape(a.shape[0], int(np.prod(a.shape[1:]))):
                lines.append(_fmt_row(row, is_float))
    return "\n".join(lines) + "\n"


def loads(text: str) -> tuple[dict, dict]:
    lines = text.split("\n")
    if not lines or lines[0] != MAGIC:
        raise SchemaError("not a model file (missing header line)")
    header, arrays = {}, {}
    i = 1
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line:
            continue
        if line.startswith("@array "):
            parts = line.split(" ")
            name, dtype = parts[1], parts[2]
            shape = tuple(int(s) for s in parts[3:])
            conv = float if dtype == "float64" else int
            n_lines = 1 if len(shape) <= 1 else shape[0]
            values = []
            for row in lines[i:i + n_lines]:
                values.extend(conv(v) for v in row.split())
            i += n_lines
            a = np.array(values, dtype=np.float64 if conv is float else np.int64)
            if a.size != int(np.prod(shape)):
                raise SchemaError(f"array {name}: expected {int(np.prod(shape))} values, got {a.size}")
            arrays[name] = a.reshape(shape)
        else:
            key, sep, value = line.partition(" = ")
            if not sep:
                raise SchemaError(f"malformed header line: {line!r}")
            header[key] = json.loads(value)
    return header, arrays


def write_atomic(path, text: str) -> None:
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Model <-> (header, arrays)
# ---------------------------------------------------------------------------


def _labels_out(labels):
    return [x if isinstance(x, str) else int(x) for x in labels]


def to_parts(model, prefix: str = "") -> tuple[dict, dict]:
    h, a = {}, {}
    p = prefix

    if isinstance(model, LinearModel):
        h[p + "type"] = "linear"
        h.update({p + "method": model.kind, p + "intercept": model.intercept, p + "penalty": model.penalty,
                  p + "converged": model.converged, p + "singular": model.singular, p + "n_iter": model.n_iter})
        a[p + "weights"] = model.weights
    elif isinstance(model, ConstantModel):
        h.update({p + "type": "constant", p + "value": model.value, p + "n_features": model.n_features})
    elif isinstance(model, RegressionTree):
        h.update({p + "type": "tree", p + "n_features": model.n_features, p + "max_depth": model.max_depth,
                  p + "min_samples_leaf": model.min_samples_leaf})
        a.update({p + k: v for k, v in model.to_arrays().items()})
    elif isinstance(model, RandomForest):
        h.update({p + "type": "forest", p + "n_trees": len(model.trees), p + "m_try": model.m_try,
                  p + "seed": model.seed, p + "bootstrap": model.bootstrap})
        for i, t in enumerate(model.trees):
            th, ta = to_parts(t, f"{p}tree{i}.")
            h.update(th)
            a.update(ta)
    elif isinstance(model, FittedRegressor):
        h.update({p + "type": "fitted", p + "method": model.spec.method,
                  p + "params": repr(model.spec.params), p + "chosen": repr(model.chosen),
                  p + "val_sse": model.val_sse, p + "val_n": model.val_n, p + "fallback": model.fallback})
        mh, ma = to_parts(model.model, p + "model.")
        h.update(mh)
        a.update(ma)
    elif isinstance(model, WeightMatrix):
        h.update({p + "type": "mtl", p + "task_labels": _labels_out(model.task_labels), p + "lam": model.lam,
                  p + "empty_tasks": _labels_out(model.empty_tasks)})
        a[p + "W"] = model.W
        a[p + "intercepts"] = model.intercepts
    elif isinstance(model, ClusterBasedModel):
        h.update({p + "type": "cluster", p + "methods": list(model.methods), p + "k": model.k,
                  p + "task_labels": _labels_out(model.task_labels)})
        a[p + "centroids"] = model.centroids
        for (i, m), f in sorted(model.models.items()):
            fh, fa = to_parts(f, f"{p}c{i}.{m}.")
            h.update(fh)
            a.update(fa)
    elif isinstance(model, PerTaskModel):
        keys = sorted(model.models)
        h.update({p + "type": "per_task", p + "fallback_value": model.fallback_value,
                  p + "n_features": model.n_features, p + "keys": [[int(t), m] for t, m in keys]})
        for t, m in keys:
            fh, fa = to_parts(model.models[(t, m)], f"{p}t{t}.{m}.")
            h.update(fh)
            a.update(fa)
    elif isinstance(model, ClusterAssignment):
        h.update({p + "type": "kmeans", p + "inertia": model.inertia, p + "n_iter": model.n_iter,
                  p + "converged": model.converged})
        a[p + "centroids"] = model.centroids
        a[p + "labels"] = model.labels
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    return h, a


def _labels_in(labels):
    return tuple(labels)


def from_parts(h: dict, a: dict, prefix: str = ""):
    p = prefix
    kind = h.get(p + "type")
    if kind == "linear":
        return LinearModel(a[p + "weights"].astype(float), h[p + "intercept"], h[p + "penalty"], h[p + "method"],
                           h[p + "converged"], h[p + "singular"], h[p + "n_iter"])
    if kind == "constant":
        return ConstantModel(h[p + "value"], h[p + "n_features"])
    if kind == "tree":
        arrays = {k: a[p + k] for k in ("feature", "threshold", "left", "right", "value", "count", "depth")}
        return RegressionTree.from_arrays(arrays, h[p + "n_features"], h[p + "max_depth"], h[p + "min_samples_leaf"])
    if kind == "forest":
        trees = [from_parts(h, a, f"{p}tree{i}.") for i in range(h[p + "n_trees"])]
        return RandomForest(trees, h[p + "m_try"], h[p + "seed"], h[p + "bootstrap"])
    if kind == "fitted":
        spec = RegressorSpec(h[p + "method"], ast.literal_eval(h[p + "params"]))
        return FittedRegressor(spec, from_parts(h, a, p + "model."), ast.literal_eval(h[p + "chosen"]),
                               h[p + "val_sse"], h[p + "val_n"], h[p + "fallback"])
    if kind == "mtl":
        return WeightMatrix(a[p + "W"], a[p + "intercepts"], _labels_in(h[p + "task_labels"]), h[p + "lam"],
                            tuple(h[p + "empty_tasks"]))
    if kind == "cluster":
        methods = tuple(h[p + "methods"])
        models = {(i, m): from_parts(h, a, f"{p}c{i}.{m}.") for i in range(h[p + "k"]) for m in methods}
        return ClusterBasedModel(a[p + "centroids"], models, methods, None, _labels_in(h[p + "task_labels"]))
    if kind == "per_task":
        models = {(t, m): from_parts(h, a, f"{p}t{t}.{m}.") for t, m in h[p + "keys"]}
        return PerTaskModel(models, h[p + "fallback_value"], h[p + "n_features"])
    if kind == "kmeans":
        return ClusterAssignment(a[p + "centroids"], a[p + "labels"].astype(np.intp), h[p + "inertia"],
                                 h[p + "n_iter"], h[p + "converged"])
    raise SchemaError(f"unknown model type {kind!r} under prefix {prefix!r}")


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def model_to_text(model, preprocess: PreprocessSpec | None = None, meta: dict | None = None) -> str:
    h = {f"meta.{k}": v for k, v in (meta or {}).items()}
    if preprocess is not None:
        h.update({f"preprocess.{k}": v for k, v in preprocess.to_record().items()})
    mh, ma = to_parts(model, "model.")
    h.update(mh)
    return dumps(h, ma)


def model_from_text(text: str):
    """Returns ``(model, preprocess_spec_or_None, meta)``."""
    h, a = loads(text)
    pre = {k[len("preprocess."):]: v for k, v in h.items() if k.startswith("preprocess.")}
    meta = {k[len("meta."):]: v for k, v in h.items() if k.startswith("meta.")}
    spec = PreprocessSpec.from_record(pre) if pre else None
    return from_parts(h, a, "model."), spec, meta


def save_model(path, model, preprocess: PreprocessSpec | None = None, meta: dict | None = None) -> None:
    write_atomic(path, model_to_text(model, preprocess, meta))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_text(fh.read())
