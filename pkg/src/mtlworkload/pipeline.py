"""Model fitting with tuning, cluster-based single-task learning, and the
k-fold benchmark harness.

Approaches compared by :func:`cross_validate`:

``single``
    one model per method on all training rows pooled, task identity ignored.
``cluster``
    k-means on the feature rows, one model per (cluster, method); test rows
    are routed to the nearest centroid's model.
``per_task``
    one model per (task, method), each task fitted on its own rows only.
``mtl``
    one joint L2,1-penalised model with a weight row per task.

Hyperparameters are tuned on a per-task stratified holdout of the training
rows (20% by default) and the model is then refitted on all training rows.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import clustering
from .data import MultiTaskDataset, fold_assignment, holdout_split
from .errors import DataError, MetricError, ParameterError
from .linear import (
    LASSO,
    RIDGE,
    LinearModel,
    grouped_gram,
    lambda_grid,
    lasso_cd,
    ridge_solve,
)
from .mtl import MtlFitConfig, mtl_fit, mtl_lambda_max, predict_dataset
from .seeding import derive_int, derive_rng
from .trees import forest_fit, tree_fit

log = logging.getLogger(__name__)

TREE = "tree"
FOREST = "forest"
METHODS = (LASSO, RIDGE, TREE, FOREST)
MTL = "mtl"

SINGLE = "single"
CLUSTER = "cluster"
PER_TASK = "per_task"
APPROACHES = (SINGLE, CLUSTER, PER_TASK, MTL)

BEST = "best"

# Fewer rows than this and a (cluster, method) model falls back to the mean.
MIN_SAMPLES = 3

_DEFAULTS = {
    LASSO: {"n_lambdas": 20, "lambda_ratio": None, "tol": 1e-8, "max_iter": 10000},
    RIDGE: {"n_lambdas": 20, "lambda_ratio": None},
    TREE: {"depths": (2, 4, 6, 8), "min_samples_leaf": 5},
    FOREST: {"depths": (2, 4, 6, 8), "min_samples_leaf": 5, "n_trees": 100, "m_try": None},
}


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _pair(y, y_hat):
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.shape != y_hat.shape:
        raise MetricError(f"length mismatch: {y.shape[0]} vs {y_hat.shape[0]}")
    if y.size == 0:
        raise MetricError("empty input")
    return y, y_hat


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def r2(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0:
        raise MetricError("R^2 is undefined for a constant target")
    return 1.0 - float(((y - y_hat) ** 2).sum()) / ss_tot


# ---------------------------------------------------------------------------
# Regressor contract
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressorSpec:
    """A method id plus hyperparameter overrides.

    Recognised keys: lasso ``n_lambdas``, ``lambda_ratio`` (bottom of the
    penalty grid relative to its top; default 1e-3, or 1e-2 for problems
    with fewer rows than features), ``tol``,
    ``max_iter``; ridge ``n_lambdas``, ``lambda_ratio``; tree ``depths``,
    ``min_samples_leaf``; forest the tree keys plus ``n_trees`` and
    ``m_try``. Every method takes ``tune`` (default True) and
    ``val_fraction`` (default 0.2). With ``tune=False`` linear models use the
    last (weakest) penalty of the grid and trees the deepest depth.
    """

    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; choose from {METHODS}")
        unknown = set(self.params) - set(_DEFAULTS[self.method]) - {"tune", "val_fraction"}
        if unknown:
            raise ParameterError(f"unknown {self.method} parameters: {sorted(unknown)}")

    def get(self, key):
        if key == "tune":
            return self.params.get("tune", True)
        if key == "val_fraction":
            return self.params.get("val_fraction", 0.2)
        return self.params.get(key, _DEFAULTS[self.method][key])


def default_specs(methods=METHODS, **overrides) -> list[RegressorSpec]:
    """Specs for ``methods``; ``overrides`` maps method -> params dict."""
    return [RegressorSpec(m, dict(overrides.get(m, {}))) for m in methods]


class ConstantModel:
    def __init__(self, value: float, n_features: int):
        self.value = float(value)
        self.n_features = n_features

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DataError(f"X has {X.shape[1]} columns, model expects {self.n_features}")
        return np.full(X.shape[0], self.value)


@dataclass
class FittedRegressor:
    spec: RegressorSpec
    model: object
    chosen: dict
    val_sse: float = math.nan
    val_n: int = 0
    fallback: bool = False

    @property
    def val_mse(self) -> float:
        return self.val_sse / self.val_n if self.val_n else math.nan

    def predict(self, X) -> np.ndarray:
        return self.model.predict(X)


def _linear_anchor(method, G, c):
    """Top of the penalty grid for each problem in a stack.

    Lasso: the smallest penalty giving all-zero weights. Ridge has no such
    point, so its grid starts at the largest eigenvalue of the Gram matrix.
    """
    if method == LASSO:
        return np.abs(c).max(axis=1) if c.shape[1] else np.zeros(len(c))
    if G.shape[1] == 0:
        return np.zeros(len(G))
    return np.linalg.eigvalsh(G)[:, -1]


def _linear_stack(method, spec, G, c, yy, ratios):
    """Solve every problem in the stack at penalty ``ratio * anchor``."""
    lam = np.asarray(ratios) * _linear_anchor(method, G, c)
    if method == LASSO:
        W, _, converged = lasso_cd(G, c, lam, tol=spec.get("tol"), max_iter=spec.get("max_iter"), yy=yy)
        if not converged:
            log.warning("lasso did not converge within max_iter")
        return W, lam
    W, _ = ridge_solve(G, c, lam)
    return W, lam


def _grid_floor(spec, n_rows, n_features):
    """Bottom of the penalty grid relative to its top, per problem.

    Coordinate descent crawls near the interpolating solution when a
    problem has fewer rows than features, so the default floor is raised
    there (the usual glmnet convention).
    """
    n_rows = np.asarray(n_rows)
    r = spec.get("lambda_ratio")
    if r is not None:
        return np.full(n_rows.shape, float(r))
    return np.where(n_rows >= n_features, 1e-3, 1e-2)


def _tune_linear_stack(method, spec, X, y, groups, n_groups, fit_rows, val_rows):
    """Grid search per group. Returns chosen ratios and validation SSE/count.

    ``groups`` splits rows into independent problems (a single group for a
    pooled fit). The grid is walked from strong to weak penalty with warm
    starts for the lasso.
    """
    gram = grouped_gram(X[fit_rows], y[fit_rows], groups[fit_rows], n_groups)
    anchor = _linear_anchor(method, gram.G, gram.c)
    n = spec.get("n_lambdas")
    floor = _grid_floor(spec, gram.counts, X.shape[1])
    # (n_groups, n) ratios, descending from 1 to the floor.
    ratios = np.geomspace(np.ones(n_groups), floor, n, axis=1) if n > 1 else floor[:, None]

    Xv, yv, gv = X[val_rows], y[val_rows], groups[val_rows]
    sse = np.zeros((n_groups, ratios.shape[1]))
    W = None
    for j in range(ratios.shape[1]):
        lam = ratios[:, j] * anchor
        if method == LASSO:
            W, _, _ = lasso_cd(gram.G, gram.c, lam, W0=W, tol=spec.get("tol"),
                               max_iter=spec.get("max_iter"), yy=gram.yy)
        else:
            W, _ = ridge_solve(gram.G, gram.c, lam)
        b = gram.y_mean - np.einsum("gd,gd->g", gram.x_mean, W)
        pred = np.einsum("nd,nd->n", Xv, W[gv]) + b[gv]
        sse[:, j] = np.bincount(gv, weights=(yv - pred) ** 2, minlength=n_groups)
    best = np.argmin(sse, axis=1)
    val_n = np.bincount(gv, minlength=n_groups)
    idx = np.arange(n_groups)
    return ratios[idx, best], sse[idx, best], val_n


def _fit_linear(spec, X, y, groups, seed):
    method = spec.method
    n = X.shape[0]
    ratio = float(_grid_floor(spec, [n], X.shape[1])[0])
    val_sse, val_n = math.nan, 0
    if spec.get("tune"):
        fit_rows, val_rows = holdout_split(groups, spec.get("val_fraction"), derive_rng(seed, "inner-split"))
        if len(val_rows) and len(fit_rows) >= 2:
            zeros = np.zeros(n, dtype=np.intp)
            r, s, vn = _tune_linear_stack(method, spec, X, y, zeros, 1, fit_rows, val_rows)
            ratio, val_sse, val_n = float(r[0]), float(s[0]), int(vn[0])
    gram = grouped_gram(X, y)
    W, lam = _linear_stack(method, spec, gram.G, gram.c, gram.yy, [ratio])
    w = W[0]
    b = float(gram.y_mean[0] - gram.x_mean[0] @ w)
    model = LinearModel(w, b, float(lam[0]), method)
    return FittedRegressor(spec, model, {"lambda_ratio": ratio, "lambda": float(lam[0])}, val_sse, val_n)


def _fit_tree_like(spec, X, y, groups, seed):
    depths = sorted(spec.get("depths"), key=lambda d: math.inf if d is None else d)
    leaf = spec.get("min_samples_leaf")

    def build(Xf, yf, depth):
        if spec.method == TREE:
            return tree_fit(Xf, yf, max_depth=depth, min_samples_leaf=leaf, seed=seed)
        return forest_fit(Xf, yf, n_trees=spec.get("n_trees"), m_try=spec.get("m_try"),
                          max_depth=depth, min_samples_leaf=leaf, seed=seed)

    depth = depths[-1]
    val_sse, val_n = math.nan, 0
    if spec.get("tune") and len(depths) > 1:
        fit_rows, val_rows = holdout_split(groups, spec.get("val_fraction"), derive_rng(seed, "inner-split"))
        if len(val_rows) and len(fit_rows) >= 2:
            # A greedy tree cut at depth d is the tree grown with max_depth=d,
            # so one deep fit scores every candidate depth.
            deep = build(X[fit_rows], y[fit_rows], depths[-1])
            yv = y[val_rows]
            scores = [float(((yv - deep.predict(X[val_rows], d)) ** 2).sum()) for d in depths]
            i = int(np.argmin(scores))
            depth, val_sse, val_n = depths[i], scores[i], len(val_rows)
    return FittedRegressor(spec, build(X, y, depth), {"max_depth": depth}, val_sse, val_n)


def fit_regressor(spec: RegressorSpec, X, y, groups=None, seed=0) -> FittedRegressor:
    """Tune on an inner holdout, then refit ``spec`` on all rows.

    ``groups`` (task index per row) stratifies the holdout.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
    groups = np.zeros(len(y), dtype=np.intp) if groups is None else np.asarray(groups)
    if len(y) < MIN_SAMPLES:
        if len(y) == 0:
            raise DataError("cannot fit a model on zero rows")
        return FittedRegressor(spec, ConstantModel(y.mean(), X.shape[1]), {}, fallback=True)
    if spec.method in (LASSO, RIDGE):
        return _fit_linear(spec, X, y, groups, seed)
    return _fit_tree_like(spec, X, y, groups, seed)


def model_seed(seed, method: str, index: int = 0) -> int:
    """Seed for the model of ``method`` on cluster (or task) ``index``.

    The single-task model uses index 0, the same as cluster 0, which makes a
    one-cluster fit reproduce the single-task fit exactly.
    """
    return derive_int(seed, "model", method, index)


def fit_single_task(X, y, groups, specs, seed=0) -> dict[str, FittedRegressor]:
    return {s.method: fit_regressor(s, X, y, groups, model_seed(seed, s.method, 0)) for s in specs}


# ---------------------------------------------------------------------------
# Cluster-based single-task learning
# ---------------------------------------------------------------------------


@dataclass
class ClusterBasedModel:
    centroids: np.ndarray
    models: dict  # (cluster, method) -> FittedRegressor
    methods: tuple
    gap: clustering.GapResult | None = None
    # Columns appended for task one-hot clustering; empty when disabled.
    task_labels: tuple = ()

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _cluster_features(X, task, task_labels, n_labels):
    if not n_labels:
        return X
    onehot = np.zeros((X.shape[0], n_labels))
    known = task >= 0
    onehot[np.flatnonzero(known), task[known]] = 1.0
    return np.hstack([X, onehot])


def fit_cluster_based(
    X,
    y,
    groups=None,
    k="auto",
    specs=None,
    seed=0,
    k_max: int = 6,
    gap_refs: int = 20,
    task_in_clustering: bool = False,
    task_labels=(),
) -> ClusterBasedModel:
    """Cluster training rows with k-means, then fit one model per (cluster, method).

    ``k="auto"`` picks the cluster count with the gap statistic. With
    ``task_in_clustering`` the task one-hot is appended to the clustering
    features (``groups`` must then index ``task_labels``).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise DataError("no training rows")
    groups = np.zeros(len(y), dtype=np.intp) if groups is None else np.asarray(groups, dtype=np.intp)
    specs = list(specs) if specs is not None else default_specs()
    labels_for_clustering = tuple(task_labels) if task_in_clustering else ()
    Z = _cluster_features(X, groups, labels_for_clustering, len(labels_for_clustering))

    gap = None
    if k == "auto":
        gap = clustering.gap_statistic(Z, k_max=k_max, B=gap_refs, seed=derive_int(seed, "gap"))
        k = gap.k_best
    k = int(min(int(k), X.shape[0]))
    if k < 1:
        raise ParameterError("k must be >= 1")

    if k == 1:
        centroids = Z.mean(axis=0, keepdims=True)
        labels = np.zeros(X.shape[0], dtype=np.intp)
    else:
        assignment = clustering.kmeans(Z, k, seed=derive_int(seed, "cluster-kmeans"))
        centroids, labels = assignment.centroids, assignment.labels

    models = {}
    for i in range(k):
        rows = labels == i
        for s in specs:
            if rows.sum() < MIN_SAMPLES:
                log.warning("cluster %d has %d rows; %s falls back to the cluster mean", i, rows.sum(), s.method)
            if rows.any():
                models[(i, s.method)] = fit_regressor(s, X[rows], y[rows], groups[rows], model_seed(seed, s.method, i))
            else:
                models[(i, s.method)] = FittedRegressor(s, ConstantModel(y.mean(), X.shape[1]), {}, fallback=True)
    return ClusterBasedModel(centroids, models, tuple(s.method for s in specs), gap, labels_for_clustering)


def predict_cluster_based(model: ClusterBasedModel, X, method: str, task=None) -> np.ndarray:
    """Route each row to its nearest centroid and predict with that cluster's model."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if method not in model.methods:
        raise ParameterError(f"model has no {method!r} regressors")
    if model.task_labels:
        if task is None:
            raise ParameterError("this model clusters on task identity; pass task indices")
        Z = _cluster_features(X, np.asarray(task, dtype=np.intp), model.task_labels, len(model.task_labels))
    else:
        Z = X
    if Z.shape[1] != model.centroids.shape[1]:
        raise DataError(f"X has {X.shape[1]} columns, model expects {model.centroids.shape[1]}")
    labels = clustering.assign_clusters(Z, model.centroids) if model.k > 1 else np.zeros(len(X), dtype=np.intp)
    out = np.empty(X.shape[0])
    for i in range(model.k):
        rows = labels == i
        if rows.any():
            out[rows] = model.models[(i, method)].predict(X[rows])
    return out


def select_best_method(results) -> str:
    """Method with the smallest MSE; ties go to lasso < ridge < tree < forest.

    ``results`` maps method id to an MSE (or to anything with an ``mse``
    attribute). NaN entries are ignored.
    """
    if not results:
        raise ParameterError("no results to select from")
    order = {m: i for i, m in enumerate(METHODS)}

    def score(item):
        m, r = item
        v = getattr(r, "mse", r)
        return (math.inf if v is None or math.isnan(v) else v, order.get(m, len(order)), str(m))

    return min(results.items(), key=score)[0]


# ---------------------------------------------------------------------------
# Per-task single-task learning
# ---------------------------------------------------------------------------


@dataclass
class PerTaskModel:
    """Independent models per task; tasks with no rows predict the pooled mean."""

    models: dict  # (task index, method) -> FittedRegressor
    fallback_value: float
    n_features: int

    def predict(self, X, task, method) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        task = np.asarray(task, dtype=np.intp)
        out = np.full(X.shape[0], self.fallback_value)
        for t in np.unique(task):
            m = self.models.get((int(t), method))
            if m is not None:
                rows = task == t
                out[rows] = m.predict(X[rows])
        return out


def _per_task_linear(spec, ds: MultiTaskDataset, seed):
    """All tasks' lasso/ridge fits at once, each tuned on its own holdout."""
    T = ds.n_tasks
    counts = ds.task_sizes()
    big = counts >= MIN_SAMPLES
    ratios = _grid_floor(spec, counts, ds.n_features).astype(float)
    val_sse = np.full(T, math.nan)
    val_n = np.zeros(T, dtype=np.intp)
    if spec.get("tune"):
        rng = derive_rng(seed, "inner-split")
        mask = big[ds.task]
        fit_rows, val_rows = holdout_split(ds.task[mask], spec.get("val_fraction"), rng)
        idx = np.flatnonzero(mask)
        fit_rows, val_rows = idx[fit_rows], idx[val_rows]
        if len(val_rows):
            r, s, vn = _tune_linear_stack(spec.method, spec, ds.X, ds.y, ds.task, T, fit_rows, val_rows)
            has_val = vn > 0
            ratios[has_val] = r[has_val]
            val_sse[has_val] = s[has_val]
            val_n = vn
    gram = grouped_gram(ds.X, ds.y, ds.task, T)
    W, lam = _linear_stack(spec.method, spec, gram.G, gram.c, gram.yy, ratios)
    b = gram.y_mean - np.einsum("td,td->t", gram.x_mean, W)
    models = {}
    for t in range(T):
        if counts[t] == 0:
            continue
        if not big[t]:
            yt = ds.y[ds.task == t]
            models[(t, spec.method)] = FittedRegressor(spec, ConstantModel(yt.mean(), ds.n_features), {}, fallback=True)
            continue
        lm = LinearModel(W[t], float(b[t]), float(lam[t]), spec.method)
        models[(t, spec.method)] = FittedRegressor(
            spec, lm, {"lambda_ratio": float(ratios[t])}, float(val_sse[t]), int(val_n[t])
        )
    return models


def fit_per_task(ds: MultiTaskDataset, specs, seed=0) -> PerTaskModel:
    models = {}
    for s in specs:
        if s.method in (LASSO, RIDGE):
            models.update(_per_task_linear(s, ds, model_seed(seed, s.method, 0)))
            continue
        for t in range(ds.n_tasks):
            rows = ds.task_rows(t)
            if len(rows):
                models[(t, s.method)] = fit_regressor(
                    s, ds.X[rows], ds.y[rows], None, model_seed(seed, s.method, t)
                )
    return PerTaskModel(models, float(ds.y.mean()), ds.n_features)


# ---------------------------------------------------------------------------
# Multi-task fitting with tuning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MtlTuning:
    n_lambdas: int = 20
    lambda_ratio: float = 1e-3
    val_fraction: float = 0.2
    tune: bool = True
    tol: float = 1e-9
    max_iter: int = 20000
    sample_weighting: bool = False


def fit_mtl_tuned(ds: MultiTaskDataset, tuning: MtlTuning = MtlTuning(), seed=0):
    """Pick the penalty on a per-task holdout (pooled validation MSE), then refit.

    The penalty is chosen as a fraction of ``lambda_max`` and that fraction
    is reapplied to the full training data's ``lambda_max``.

    Returns ``(model, info)`` where ``info`` has ``lambda_ratio``, ``lambda``
    and ``val_mse``.
    """
    ratios = np.geomspace(1.0, tuning.lambda_ratio, tuning.n_lambdas)
    ratio = tuning.lambda_ratio
    val_mse = math.nan

    def cfg(lam):
        return MtlFitConfig(lam=lam, tol=tuning.tol, max_iter=tuning.max_iter,
                            sample_weighting=tuning.sample_weighting)

    if tuning.tune:
        fit_rows, val_rows = holdout_split(ds.task, tuning.val_fraction, derive_rng(seed, "inner-split"))
        if len(val_rows):
            fit_ds, val_ds = ds.subset(fit_rows), ds.subset(val_rows)
            lam_max = mtl_lambda_max(fit_ds, sample_weighting=tuning.sample_weighting)
            W0 = None
            scores = []
            for r in ratios:
                model, trace = mtl_fit(fit_ds, cfg(r * lam_max), W0)
                W0 = model.W
                scores.append(float(np.mean((val_ds.y - predict_dataset(model, val_ds)) ** 2)))
            i = int(np.argmin(scores))
            ratio, val_mse = float(ratios[i]), scores[i]

    lam = ratio * mtl_lambda_max(ds, sample_weighting=tuning.sample_weighting)
    model, trace = mtl_fit(ds, cfg(lam))
    if not trace.converged:
        log.warning("MTL solver hit max_iter at lambda=%g", lam)
    return model, {"lambda_ratio": ratio, "lambda": lam, "val_mse": val_mse}


# ---------------------------------------------------------------------------
# Cross-validation and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldRecord:
    replication: int
    fold: int
    approach: str
    method: str
    mse: float
    r2: float
    n_test: int
    selected: str = ""


@dataclass
class EvalResult:
    """Test metrics of every method of one approach on one fold."""

    replication: int
    fold: int
    approach: str
    mse: dict
    r2: dict
    val_mse: dict
    selected: str
    k: int | None = None  # cluster count, cluster approach only


@dataclass
class BenchmarkOptions:
    approaches: tuple = (SINGLE, CLUSTER, MTL)
    specs: tuple = tuple(default_specs())
    k: object = "auto"
    k_max: int = 6
    gap_refs: int = 20
    fix_k: bool = False
    task_in_clustering: bool = False
    paper_literal: bool = False
    mtl: MtlTuning = MtlTuning()


class FoldError(RuntimeError):
    def __init__(self, replication, fold, approach, cause):
        super().__init__(f"replication {replication}, fold {fold}, approach {approach}: {cause}")
        self.replication = replication
        self.fold = fold
        self.approach = approach


def _safe_r2(y, y_hat):
    try:
        return r2(y, y_hat)
    except MetricError:
        return math.nan


def _evaluate(rep, fold, approach, test, preds, val_mse, paper_literal):
    mses = {m: mse(test.y, p) for m, p in preds.items()}
    r2s = {m: _safe_r2(test.y, p) for m, p in preds.items()}
    basis = mses if paper_literal else val_mse
    if all(math.isnan(v) for v in basis.values()):
        basis = mses
    selected = select_best_method(basis)
    return EvalResult(rep, fold, approach, mses, r2s, val_mse, selected)


def _cluster_val_mse(model: ClusterBasedModel, method):
    sse = sum(m.val_sse for (i, meth), m in model.models.items() if meth == method and m.val_n)
    n = sum(m.val_n for (i, meth), m in model.models.items() if meth == method)
    return sse / n if n else math.nan


def _per_task_val_mse(model: PerTaskModel, method):
    fitted = [m for (t, meth), m in model.models.items() if meth == method and m.val_n]
    n = sum(m.val_n for m in fitted)
    return sum(m.val_sse for m in fitted) / n if n else math.nan


def evaluate_fold(train, test, approach, opts: BenchmarkOptions, seed, rep=0, fold=0, k=None) -> EvalResult:
    """Fit one approach on ``train`` and score every method on ``test``."""
    specs = list(opts.specs)
    if approach == SINGLE:
        models = fit_single_task(train.X, train.y, train.task, specs, seed)
        preds = {m: f.predict(test.X) for m, f in models.items()}
        val = {m: f.val_mse for m, f in models.items()}
    elif approach == CLUSTER:
        model = fit_cluster_based(
            train.X, train.y, train.task, opts.k if k is None else k, specs, seed,
            k_max=opts.k_max, gap_refs=opts.gap_refs,
            task_in_clustering=opts.task_in_clustering, task_labels=train.task_labels,
        )
        preds = {s.method: predict_cluster_based(model, test.X, s.method, test.task) for s in specs}
        val = {s.method: _cluster_val_mse(model, s.method) for s in specs}
        res = _evaluate(rep, fold, approach, test, preds, val, opts.paper_literal)
        res.k = model.k
        return res
    elif approach == PER_TASK:
        model = fit_per_task(train, specs, seed)
        preds = {s.method: model.predict(test.X, test.task, s.method) for s in specs}
        val = {s.method: _per_task_val_mse(model, s.method) for s in specs}
    elif approach == MTL:
        model, info = fit_mtl_tuned(train, opts.mtl, derive_int(seed, "mtl"))
        preds = {MTL: predict_dataset(model, test)}
        val = {MTL: info["val_mse"]}
    else:
        raise ParameterError(f"unknown approach {approach!r}")
    return _evaluate(rep, fold, approach, test, preds, val, opts.paper_literal)


@dataclass
class BenchmarkReport:
    records: list
    approaches: tuple
    methods: tuple
    config: dict = field(default_factory=dict)
    cluster_k: dict = field(default_factory=dict)  # (replication, fold) -> K

    def values(self, approach, method, metric="mse") -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.records
                         if r.approach == approach and r.method == method])

    def replication_mse(self, approach, method) -> np.ndarray:
        """Mean test MSE over folds, one value per replication."""
        reps = sorted({r.replication for r in self.records})
        return np.array([
            np.mean([r.mse for r in self.records
                     if r.approach == approach and r.method == method and r.replication == rep])
            for rep in reps
        ])

    def summary(self) -> list[dict]:
        """Mean and population variance over every stored fold value."""
        rows = []
        for a in self.approaches:
            for m in self._methods_for(a):
                mse_v = self.values(a, m, "mse")
                r2_v = self.values(a, m, "r2")
                r2_ok = r2_v[~np.isnan(r2_v)]
                rows.append({
                    "approach": a,
                    "method": m,
                    "mse_mean": float(mse_v.mean()),
                    "mse_var": float(mse_v.var()),
                    "r2_mean": float(r2_ok.mean()) if len(r2_ok) else math.nan,
                    "r2_var": float(r2_ok.var()) if len(r2_ok) else math.nan,
                    "n": int(len(mse_v)),
                })
        return rows

    def _methods_for(self, approach):
        present = {r.method for r in self.records if r.approach == approach}
        order = list(self.methods) + [MTL, BEST]
        return [m for m in order if m in present]

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["approach", "method", "mse_mean", "mse_var", "r2_mean", "r2_var", "n"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.summary():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def folds_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "fold", "approach", "method", "mse", "r2", "n_test", "selected"])
        for r in self.records:
            w.writerow([r.replication, r.fold, r.approach, r.method, repr(r.mse), repr(r.r2), r.n_test, r.selected])
        return buf.getvalue()

    def to_markdown(self) -> str:
        """Rows are methods (Mean / Var.), column groups are approaches (MSE, R^2)."""
        titles = {
            SINGLE: "Single Task Learning",
            CLUSTER: "Cluster-based Single Task Learning",
            PER_TASK: "Per-task Single Task Learning",
            MTL: "Multi-task Learning",
        }
        names = {LASSO: "Lasso Regression", RIDGE: "Ridge Regression", TREE: "Regression Tree",
                 FOREST: "Random Forests", MTL: "Multi-task L2,1 Regression", BEST: "Selected (min MSE)"}
        summary = {(r["approach"], r["method"]): r for r in self.summary()}
        methods = [m for m in list(self.methods) + [MTL, BEST]
                   if any((a, m) in summary for a in self.approaches)]

        head = "| Method | Measure | " + " | ".join(f"{titles[a]} MSE | {titles[a]} R²" for a in self.approaches) + " |"
        sep = "|" + "---|" * (2 + 2 * len(self.approaches))
        lines = [head, sep]
        for m in methods:
            for label, suffix in (("Mean", "mean"), ("Var.", "var")):
                cells = []
                for a in self.approaches:
                    row = summary.get((a, m))
                    if row is None:
                        cells += ["", ""]
                    else:
                        cells += [_fmt(row[f"mse_{suffix}"]), _fmt(row[f"r2_{suffix}"])]
                first = names.get(m, m) if suffix == "mean" else ""
                lines.append(f"| {first} | {label} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4g}"


def cross_validate(
    ds: MultiTaskDataset,
    approaches=(SINGLE, CLUSTER, MTL),
    k_folds: int = 10,
    replications: int = 1,
    seed=0,
    options: BenchmarkOptions | None = None,
    progress=None,
) -> BenchmarkReport:
    """Repeated stratified k-fold evaluation of the selected approaches.

    Replication ``r`` draws fresh folds from a seed derived from
    ``(seed, r)``; every fit inside fold ``f`` is seeded from
    ``(seed, r, f)``. For each approach a ``best`` row records the test MSE
    of the method picked on validation MSE (or on test MSE with
    ``paper_literal``).
    """
    if int(k_folds) != k_folds or k_folds < 2:
        raise ParameterError("k_folds must be an integer >= 2")
    if replications < 1:
        raise ParameterError("replications must be >= 1")
    opts = replace(options or BenchmarkOptions(), approaches=tuple(approaches))
    for a in opts.approaches:
        if a not in APPROACHES:
            raise ParameterError(f"unknown approach {a!r}")

    global_k = None
    if CLUSTER in opts.approaches and opts.fix_k:
        if opts.k == "auto":
            global_k = clustering.gap_statistic(ds.X, k_max=opts.k_max, B=opts.gap_refs,
                                                seed=derive_int(seed, "gap-global")).k_best
        else:
            global_k = int(opts.k)

    records = []
    cluster_k = {}
    for rep in range(replications):
        folds = fold_assignment(ds, k_folds, derive_int(seed, "replication", rep))
        for f in range(k_folds):
            test_rows = folds == f
            if not test_rows.any():
                continue
            train, test = ds.subset(~test_rows), ds.subset(test_rows)
            fit_seed = derive_int(seed, "fit", rep, f)
            for a in opts.approaches:
                try:
                    res = evaluate_fold(train, test, a, opts, fit_seed, rep, f, k=global_k)
                except Exception as exc:
                    raise FoldError(rep, f, a, exc) from exc
                if res.k is not None:
                    cluster_k[(rep, f)] = res.k
                for m in res.mse:
                    records.append(FoldRecord(rep, f, a, m, res.mse[m], res.r2[m], test.n_samples))
                records.append(FoldRecord(rep, f, a, BEST, res.mse[res.selected], res.r2[res.selected],
                                          test.n_samples, res.selected))
            if progress:
                progress(rep, f)
    methods = tuple(s.method for s in opts.specs)
    return BenchmarkReport(records, opts.approaches, methods, config={}, cluster_k=cluster_k)
