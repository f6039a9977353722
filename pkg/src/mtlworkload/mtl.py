"""Multi-task least squares with an L2,1 (row-sparse) penalty.

For tasks ``t = 1..T`` with data ``X_t`` (n_t x D) and targets ``y_t`` the
model minimises::

    0.5 * sum_t |X_t w_t - y_t|^2  +  lam * sum_d sqrt(sum_t W[t, d]^2)

over the T x D weight matrix ``W`` whose row ``t`` is ``w_t``. The penalty
couples tasks through each feature column, so a feature is either used by
all tasks or dropped by all of them. Intercepts are handled by centring each
task's data before solving.

The solver is FISTA (accelerated proximal gradient) with a monotone
restart: whenever a momentum step increases the objective, momentum is reset
and a plain proximal-gradient step is taken from the last accepted iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import MultiTaskDataset
from .errors import DataError, NumericError, ParameterError, UnknownTaskError
from .linear import grouped_gram

FIXED_STEP = "fixed"
BACKTRACKING = "backtracking"


@dataclass(frozen=True)
class MtlFitConfig:
    lam: float = 0.0
    tol: float = 1e-10
    max_iter: int = 20000
    step: str = FIXED_STEP
    fit_intercept: bool = True
    # Scale task t's loss by 1/n_t (off: the plain sum above).
    sample_weighting: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError("lam must be >= 0")
        if self.tol <= 0:
            raise ParameterError("tol must be > 0")
        if self.max_iter < 1:
            raise ParameterError("max_iter must be >= 1")
        if self.step not in (FIXED_STEP, BACKTRACKING):
            raise ParameterError(f"unknown step rule {self.step!r}")


@dataclass
class FitTrace:
    objective: list = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0
    restarts: int = 0
    lipschitz: float = 0.0


@dataclass(frozen=True)
class WeightMatrix:
    W: np.ndarray  # (T, D)
    intercepts: np.ndarray  # (T,)
    task_labels: tuple = ()
    lam: float = 0.0
    # Tasks with no training rows: their weights are zero and the intercept
    # is the pooled training mean.
    empty_tasks: tuple = ()

    def __post_init__(self):
        if not np.all(np.isfinite(self.W)) or not np.all(np.isfinite(self.intercepts)):
            raise NumericError("weight matrix has non-finite entries")
        if not self.task_labels:
            object.__setattr__(self, "task_labels", tuple(range(self.W.shape[0])))

    @property
    def n_tasks(self) -> int:
        return self.W.shape[0]

    @property
    def n_features(self) -> int:
        return self.W.shape[1]

    def task_index(self, task) -> int:
        if isinstance(task, (int, np.integer)) and not isinstance(task, bool):
            if 0 <= task < self.n_tasks:
                return int(task)
            raise UnknownTaskError(task)
        try:
            return self.task_labels.index(task)
        except ValueError:
            raise UnknownTaskError(task) from None

    def nonzero_columns(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.W != 0, axis=0))

    def predict(self, task, X, unseen: str = "error") -> np.ndarray:
        return mtl_predict(self, task, X, unseen=unseen)


# ---------------------------------------------------------------------------
# Problem statistics
# ---------------------------------------------------------------------------


class _Problem:
    """Per-task Gram statistics; the smooth loss is separable across tasks."""

    def __init__(self, ds: MultiTaskDataset, center: bool, sample_weighting: bool = False):
        gram = grouped_gram(ds.X, ds.y, ds.task, ds.n_tasks, center=center)
        self.gram = gram
        scale = np.ones(ds.n_tasks)
        if sample_weighting:
            nz = gram.counts > 0
            scale[nz] = 1.0 / gram.counts[nz]
        self.G = gram.G * scale[:, None, None]
        self.c = gram.c * scale[:, None]
        self.yy = gram.yy * scale

    def _gw(self, W):
        return np.matmul(self.G, W[:, :, None])[:, :, 0]

    def loss(self, W):
        quad = float((W * self._gw(W)).sum())
        return 0.5 * (quad - 2.0 * float((self.c * W).sum()) + self.yy.sum())

    def grad(self, W):
        return self._gw(W) - self.c

    def objective(self, W, lam):
        return self.loss(W) + lam * l21_norm(W)

    def lipschitz(self):
        """Largest eigenvalue over the per-task Gram matrices."""
        T, D = self.c.shape
        if T == 0 or D == 0:
            return 0.0
        return float(max(np.linalg.eigvalsh(self.G)[:, -1].max(), 0.0))


def l21_norm(W) -> float:
    """Sum over feature columns of the column's Euclidean norm."""
    return float(np.sqrt((np.asarray(W) ** 2).sum(axis=0)).sum())


def _as_array(W):
    return W.W if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)


def mtl_objective(W, ds: MultiTaskDataset, lam: float, center: bool = False,
                  sample_weighting: bool = False) -> float:
    """Penalised objective evaluated from residuals.

    With ``center=False`` the data are used as given (no intercepts). With
    ``center=True`` each task's X and y are centred first, which is the
    problem :func:`mtl_fit` solves when fitting intercepts.
    """
    W = _as_array(W)
    if W.shape != (ds.n_tasks, ds.n_features):
        raise DataError(f"W has shape {W.shape}, expected {(ds.n_tasks, ds.n_features)}")
    total = 0.0
    for t, (_, Xt, yt) in enumerate(ds.tasks):
        if len(yt) == 0:
            continue
        if center:
            Xt = Xt - Xt.mean(axis=0)
            yt = yt - yt.mean()
        r = Xt @ W[t] - yt
        term = 0.5 * float(r @ r)
        total += term / len(yt) if sample_weighting else term
    return total + lam * l21_norm(W)


def mtl_gradient(W, ds: MultiTaskDataset, center: bool = False, sample_weighting: bool = False) -> np.ndarray:
    """Gradient of the smooth part, row t = X_t'(X_t w_t - y_t)."""
    return _Problem(ds, center, sample_weighting).grad(_as_array(W))


def mtl_prox(V, tau: float) -> np.ndarray:
    """Proximal map of ``tau * |.|_{2,1}``: column-wise block soft-thresholding."""
    if tau < 0:
        raise ParameterError("tau must be >= 0")
    V = np.asarray(V, dtype=float)
    if tau == 0:
        return V.copy()
    norms = np.sqrt((V ** 2).sum(axis=0))
    scale = np.zeros_like(norms)
    big = norms > tau
    scale[big] = 1.0 - tau / norms[big]
    return V * scale[None, :]


def mtl_lambda_max(ds: MultiTaskDataset, center: bool = True, sample_weighting: bool = False) -> float:
    """Smallest ``lam`` for which ``W = 0`` is optimal.

    At ``W = 0`` the gradient is ``-C`` with ``C[t] = X_t' y_t``; zero is
    optimal iff every column of ``C`` has norm at most ``lam``.
    """
    if ds.n_samples == 0:
        raise DataError("empty dataset")
    prob = _Problem(ds, center, sample_weighting)
    if ds.n_features == 0:
        return 0.0
    return float(np.sqrt((prob.c ** 2).sum(axis=0)).max())


def _fista(prob: _Problem, lam, W0, cfg: MtlFitConfig, trace: FitTrace):
    L = prob.lipschitz() * 1.01
    if cfg.step == BACKTRACKING:
        L = max(L / 4.0, np.finfo(float).tiny)
    trace.lipschitz = L
    W = W0
    F = prob.objective(W, lam)
    trace.objective.append(F)
    if not np.isfinite(F):
        raise NumericError("non-finite objective at the starting point", trace)
    if L == 0:
        # No data signal: the penalty alone is minimised at zero.
        W = np.zeros_like(W0)
        trace.objective.append(prob.objective(W, lam))
        trace.converged = True
        return W

    Y = W.copy()
    t = 1.0
    momentum = False
    quiet = 0
    for it in range(1, cfg.max_iter + 1):
        trace.n_iter = it
        gY = prob.grad(Y)
        while True:
            Z = mtl_prox(Y - gY / L, lam / L)
            if cfg.step != BACKTRACKING:
                break
            diff = Z - Y
            bound = prob.loss(Y) + np.sum(gY * diff) + 0.5 * L * np.sum(diff * diff)
            if prob.loss(Z) <= bound + 1e-12 * abs(bound):
                break
            L *= 2.0
            trace.lipschitz = L
        FZ = prob.objective(Z, lam)
        if not np.isfinite(FZ):
            raise NumericError(f"non-finite objective at iteration {it}", trace)

        if FZ > F:
            if momentum:
                trace.restarts += 1
                Y = W.copy()
                t = 1.0
                momentum = False
                continue
            # A plain step from the accepted iterate no longer decreases the
            # objective: we are at the floating-point floor.
            trace.converged = True
            break

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        Y = Z + beta * (Z - W) if beta > 0 else Z.copy()
        momentum = beta > 0
        rel = (F - FZ) / max(1.0, abs(F))
        W, F, t = Z, FZ, t_next
        trace.objective.append(F)
        quiet = quiet + 1 if rel < cfg.tol else 0
        if quiet >= 2:
            trace.converged = True
            break
    return W


def mtl_fit(ds: MultiTaskDataset, cfg: MtlFitConfig | None = None, W0=None) -> tuple[WeightMatrix, FitTrace]:
    """Fit the L2,1-penalised multi-task model.

    Parameters
    ----------
    ds : MultiTaskDataset
    cfg : MtlFitConfig
    W0 : array (T, D), optional
        Warm start (on the centred problem).

    Returns
    -------
    model : WeightMatrix
    trace : FitTrace
        ``trace.converged`` is False when ``max_iter`` ran out; the model is
        then the best iterate reached.
    """
    cfg = cfg or MtlFitConfig()
    if ds.n_samples == 0:
        raise DataError("empty dataset")
    prob = _Problem(ds, cfg.fit_intercept, cfg.sample_weighting)
    T, D = ds.n_tasks, ds.n_features
    W0 = np.zeros((T, D)) if W0 is None else np.array(W0, dtype=float, copy=True)
    if W0.shape != (T, D):
        raise DataError(f"W0 has shape {W0.shape}, expected {(T, D)}")

    trace = FitTrace()
    W = _fista(prob, cfg.lam, W0, cfg, trace)

    counts = prob.gram.counts
    empty = counts == 0
    if cfg.fit_intercept:
        b = prob.gram.y_mean - np.einsum("td,td->t", prob.gram.x_mean, W)
        b[empty] = ds.y.mean()
    else:
        b = np.zeros(T)
    W[empty] = 0.0
    empty_labels = tuple(ds.task_labels[t] for t in np.flatnonzero(empty))
    return WeightMatrix(W, b, ds.task_labels, float(cfg.lam), empty_labels), trace


def mtl_predict(model: WeightMatrix, task, X, unseen: str = "error") -> np.ndarray:
    """``X @ w_task + b_task``.

    ``unseen="mean"`` predicts tasks the model has never seen with the
    average weight row and intercept instead of raising.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_features:
        raise DataError(f"X has {X.shape[1]} columns, model expects {model.n_features}")
    try:
        t = model.task_index(task)
    except UnknownTaskError:
        if unseen != "mean":
            raise
        return X @ model.W.mean(axis=0) + model.intercepts.mean()
    return X @ model.W[t] + model.intercepts[t]


def predict_dataset(model: WeightMatrix, ds: MultiTaskDataset, unseen: str = "error") -> np.ndarray:
    """Predictions for every row of ``ds``, routed by the row's task label."""
    out = np.empty(ds.n_samples)
    for t, label in enumerate(ds.task_labels):
        rows = ds.task_rows(t)
        if len(rows):
            out[rows] = mtl_predict(model, label, ds.X[rows], unseen=unseen)
    return out
