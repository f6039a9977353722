"""Synthetic multi-task regression data with a shared sparse support.

Task ``t`` has weights ``w_t = mask * (u + eta * delta_t)``: every task uses
the same ``s`` features but with task-specific magnitudes. Targets are
``y = X_t w_t + b_t + sigma * noise`` with standard Gaussian features and a
Gaussian intercept ``b_t`` per task. Optional categorical columns add a
level effect shared by all tasks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .data import CATEGORICAL, NUMERIC, TARGET, TASK_ID, MultiTaskDataset, RecordTable
from .errors import ParameterError
from .seeding import derive_rng


@dataclass(frozen=True)
class SimConfig:
    n_tasks: int = 130
    n_per_task: int = 1000
    n_features: int = 30
    support: int = 5
    eta: float = 0.2
    sigma: float = 1.0
    intercept_scale: float = 1.0
    n_categorical: int = 0
    n_levels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.n_tasks < 1 or self.n_per_task < 1:
            raise ParameterError("n_tasks and n_per_task must be >= 1")
        if self.n_features < 0 or not 0 <= self.support <= self.n_features:
            raise ParameterError(f"need 0 <= support <= n_features, got support={self.support}, "
                                 f"n_features={self.n_features}")
        if self.sigma < 0 or self.eta < 0 or self.intercept_scale < 0:
            raise ParameterError("sigma, eta and intercept_scale must be >= 0")
        if self.n_categorical < 0 or (self.n_categorical and self.n_levels < 2):
            raise ParameterError("categorical columns need n_levels >= 2")


@dataclass(frozen=True)
class GroundTruth:
    W: np.ndarray  # (T, D); zero outside the support
    support: np.ndarray  # (D,) bool
    intercepts: np.ndarray  # (T,)
    level_effects: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # (n_categorical, n_levels)


def task_labels(n_tasks: int) -> tuple[str, ...]:
    width = max(3, len(str(n_tasks)))
    return tuple(f"t{t + 1:0{width}d}" for t in range(n_tasks))


def numeric_names(n_features: int) -> tuple[str, ...]:
    return tuple(f"x{j + 1}" for j in range(n_features))


def level_names(n_levels: int) -> tuple[str, ...]:
    return tuple(f"L{i}" for i in range(n_levels))


def ground_truth(cfg: SimConfig) -> GroundTruth:
    """Draw the true weights; depends on ``cfg.seed`` but not on row counts."""
    rng = derive_rng(cfg.seed, "truth")
    D, T, s = cfg.n_features, cfg.n_tasks, cfg.support
    support = np.zeros(D, dtype=bool)
    support[rng.choice(D, size=s, replace=False)] = True
    u = rng.standard_normal(s)
    delta = rng.standard_normal((T, s))
    W = np.zeros((T, D))
    W[:, support] = u + cfg.eta * delta
    b = cfg.intercept_scale * rng.standard_normal(T)
    effects = rng.standard_normal((cfg.n_categorical, cfg.n_levels)) if cfg.n_categorical else np.zeros((0, 0))
    return GroundTruth(W, support, b, effects)


def _rows(cfg: SimConfig, truth: GroundTruth, t: int, n: int):
    rng = derive_rng(cfg.seed, "rows", n, t)
    X = rng.standard_normal((n, cfg.n_features))
    levels = rng.integers(cfg.n_levels, size=(n, cfg.n_categorical)) if cfg.n_categorical else None
    noise = rng.standard_normal(n)
    y = X @ truth.W[t] + truth.intercepts[t]
    if levels is not None:
        y = y + truth.level_effects[np.arange(cfg.n_categorical), levels].sum(axis=1)
    if cfg.sigma:
        y = y + cfg.sigma * noise
    return X, levels, y


def simulate_records(cfg: SimConfig, truth: GroundTruth | None = None) -> tuple[RecordTable, GroundTruth]:
    """Raw record form, with categorical columns as level strings."""
    truth = ground_truth(cfg) if truth is None else truth
    labels = task_labels(cfg.n_tasks)
    n = cfg.n_per_task
    parts = [_rows(cfg, truth, t, n) for t in range(cfg.n_tasks)]
    X = np.vstack([p[0] for p in parts])
    y = np.concatenate([p[2] for p in parts])
    tags = {"task_id": TASK_ID}
    cols = {"task_id": [labels[t] for t in range(cfg.n_tasks) for _ in range(n)]}
    for j, name in enumerate(numeric_names(cfg.n_features)):
        tags[name] = NUMERIC
        cols[name] = X[:, j].copy()
    lv = level_names(cfg.n_levels)
    for c in range(cfg.n_categorical):
        codes = np.concatenate([p[1][:, c] for p in parts])
        tags[f"c{c + 1}"] = CATEGORICAL
        cols[f"c{c + 1}"] = [lv[i] for i in codes]
    tags["target"] = TARGET
    cols["target"] = y
    return RecordTable(tags, cols), truth


def simulate(cfg: SimConfig, truth: GroundTruth | None = None) -> tuple[MultiTaskDataset, GroundTruth]:
    """Generate a dataset of ``n_tasks * n_per_task`` rows and its ground truth.

    Categorical columns enter ``X`` as one indicator column per level, named
    ``c<j>=L<i>``.
    """
    truth = ground_truth(cfg) if truth is None else truth
    n = cfg.n_per_task
    Xs, ys = [], []
    for t in range(cfg.n_tasks):
        X, levels, y = _rows(cfg, truth, t, n)
        if levels is not None:
            onehot = np.zeros((n, cfg.n_categorical * cfg.n_levels))
            cols = np.arange(cfg.n_categorical) * cfg.n_levels + levels
            onehot[np.arange(n)[:, None], cols] = 1.0
            X = np.hstack([X, onehot])
        Xs.append(X)
        ys.append(y)
    names = list(numeric_names(cfg.n_features))
    names += [f"c{c + 1}={lv}" for c in range(cfg.n_categorical) for lv in level_names(cfg.n_levels)]
    task = np.repeat(np.arange(cfg.n_tasks), n)
    ds = MultiTaskDataset(np.vstack(Xs), np.concatenate(ys), task, task_labels(cfg.n_tasks), names)
    return ds, truth


def scarcity_suite(base: SimConfig, n_grid) -> list[MultiTaskDataset]:
    """One dataset per per-task size, all sharing ``base``'s ground truth."""
    n_grid = list(n_grid)
    if not n_grid:
        raise ParameterError("n_grid must not be empty")
    truth = ground_truth(base)
    return [simulate(replace(base, n_per_task=int(n)), truth)[0] for n in n_grid]


def write_records_csv(table: RecordTable, fh) -> None:
    """CSV in the ingestion layout: header row, floats written with ``repr``."""
    names = list(table.tags)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(names)
    cols = []
    for name in names:
        col = table.columns[name]
        if table.tags[name] in (NUMERIC, TARGET):
            cols.append([repr(v) for v in np.asarray(col).tolist()])
        else:
            cols.append(["" if v is None else v for v in col])
    w.writerows(zip(*cols))


def truth_parts(truth: GroundTruth, cfg: SimConfig) -> tuple[dict, dict]:
    """Header and arrays for a ground-truth file (see :mod:`.modelio`)."""
    header = {"type": "ground_truth", "task_labels": list(task_labels(cfg.n_tasks)),
              "feature_names": list(numeric_names(cfg.n_features))}
    header.update({f"config.{k}": v for k, v in cfg.__dict__.items()})
    arrays = {"W": truth.W, "support": truth.support.astype(np.int64), "intercepts": truth.intercepts,
              "level_effects": truth.level_effects}
    return header, arrays
