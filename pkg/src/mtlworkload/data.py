"""Tabular ingestion, preprocessing and fold splitting.

Raw CSV rows are read into a :class:`RecordTable` whose columns are tagged
``task_id``, ``target``, ``numeric`` or ``categorical``. :func:`preprocess`
learns a :class:`PreprocessSpec` from training rows and turns them into a
:class:`MultiTaskDataset`; :func:`apply_preprocess` replays the stored
transformation on any other rows.

Preprocessing order: rows without a task id or target are dropped, target
outliers are dropped, missing numeric cells are imputed with the mean of
the same task, categorical columns are expanded into indicator columns and
numeric columns are min-max scaled with training ranges.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ParameterError, SchemaError
from .seeding import derive_rng

log = logging.getLogger(__name__)

TASK_ID = "task_id"
TARGET = "target"
NUMERIC = "numeric"
CATEGORICAL = "categorical"

_MISSING_STRINGS = frozenset({"", "na", "nan", "null", "none"})


# ---------------------------------------------------------------------------
# Schema and raw records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schema:
    """Column tags for a CSV file.

    ``numeric=None`` means "every header column not tagged otherwise".
    """

    task_column: str = "task_id"
    target_column: str = "target"
    numeric: tuple[str, ...] | None = None
    categorical: tuple[str, ...] = ()

    def resolve(self, header: Sequence[str], require_target: bool = True) -> dict[str, str]:
        """Map header names to tags, in header order."""
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if list(header).count(h) > 1})
            raise SchemaError(f"duplicate column names: {dupes}")
        if self.task_column not in header:
            raise SchemaError(f"task-id column {self.task_column!r} not in header")
        if require_target and self.target_column not in header:
            raise SchemaError(f"target column {self.target_column!r} not in header")
        declared = list(self.categorical) + list(self.numeric or ())
        missing = [c for c in declared if c not in header]
        if missing:
            raise SchemaError(f"declared columns missing from header: {missing}")
        overlap = set(self.categorical) & set(self.numeric or ())
        if overlap or {self.task_column, self.target_column} & set(declared):
            raise SchemaError("a column is tagged more than once")

        tags = {}
        for name in header:
            if name == self.task_column:
                tags[name] = TASK_ID
            elif name == self.target_column:
                tags[name] = TARGET
            elif name in self.categorical:
                tags[name] = CATEGORICAL
            elif self.numeric is None or name in self.numeric:
                tags[name] = NUMERIC
        return tags


@dataclass
class RecordTable:
    """Column-oriented raw records.

    Numeric and target columns are float arrays with NaN for missing cells;
    task-id and categorical columns are lists of ``str`` with ``None`` for
    missing cells.
    """

    tags: dict[str, str]
    columns: dict[str, object]

    def __post_init__(self):
        kinds = list(self.tags.values())
        if kinds.count(TASK_ID) != 1:
            raise SchemaError("exactly one task-id column is required")
        if kinds.count(TARGET) > 1:
            raise SchemaError("at most one target column is allowed")
        lengths = {len(self.columns[c]) for c in self.tags}
        if len(lengths) > 1:
            raise SchemaError(f"columns have different lengths: {sorted(lengths)}")

    @property
    def n_rows(self) -> int:
        return len(self.columns[self.task_column])

    @property
    def task_column(self) -> str:
        return next(c for c, t in self.tags.items() if t == TASK_ID)

    @property
    def target_column(self) -> str | None:
        return next((c for c, t in self.tags.items() if t == TARGET), None)

    @property
    def feature_columns(self) -> list[str]:
        return [c for c, t in self.tags.items() if t in (NUMERIC, CATEGORICAL)]

    def missing_cells(self) -> dict[str, int]:
        out = {}
        for name, kind in self.tags.items():
            col = self.columns[name]
            if kind in (NUMERIC, TARGET):
                out[name] = int(np.isnan(col).sum())
            else:
                out[name] = sum(v is None for v in col)
        return out

    def take(self, rows) -> "RecordTable":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        cols = {}
        for name, kind in self.tags.items():
            col = self.columns[name]
            if kind in (NUMERIC, TARGET):
                cols[name] = col[rows]
            else:
                cols[name] = [col[i] for i in rows]
        return RecordTable(dict(self.tags), cols)


def _parse_float(cell: str) -> float:
    s = cell.strip()
    if s.lower() in _MISSING_STRINGS:
        return math.nan
    try:
        v = float(s)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


def _parse_label(cell: str):
    s = cell.strip()
    return None if s.lower() in _MISSING_STRINGS else s


def load_csv(path, schema: Schema | None = None, require_target: bool = True) -> RecordTable:
    """Read a comma-delimited UTF-8 file into a :class:`RecordTable`.

    Unparseable numeric cells become missing. Header columns that the
    schema does not tag are ignored.
    """
    schema = schema or Schema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        tags = schema.resolve(header, require_target=require_target)
        index = {name: header.index(name) for name in tags}
        raw = {name: [] for name in tags}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            for name, i in index.items():
                raw[name].append(row[i])

    columns = {}
    for name, kind in tags.items():
        if kind in (NUMERIC, TARGET):
            columns[name] = np.array([_parse_float(v) for v in raw[name]], dtype=float)
        else:
            columns[name] = [_parse_label(v) for v in raw[name]]
    return RecordTable(tags, columns)


# ---------------------------------------------------------------------------
# Multi-task dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiTaskDataset:
    """Pooled rows with a task index per row.

    ``X`` is (N, D), ``y`` is (N,), ``task`` holds indices into
    ``task_labels``. Subsets produced by :meth:`subset` keep the full label
    list so task indices stay aligned across folds; a task may then have no
    rows in a particular subset.
    """

    X: np.ndarray
    y: np.ndarray
    task: np.ndarray
    task_labels: tuple
    feature_names: tuple

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        task = np.asarray(self.task, dtype=np.intp)
        if X.ndim != 2:
            raise DataError(f"X must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],) or task.shape != (X.shape[0],):
            raise DataError("X, y and task must have the same number of rows")
        if X.shape[1] != len(self.feature_names):
            raise DataError(
                f"{X.shape[1]} feature columns but {len(self.feature_names)} feature names"
            )
        if len(task) and (task.min() < 0 or task.max() >= len(self.task_labels)):
            raise DataError("task index out of range")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("dataset contains missing or non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "task", task)
        object.__setattr__(self, "task_labels", tuple(self.task_labels))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @classmethod
    def from_tasks(cls, tasks: Iterable, feature_names=None) -> "MultiTaskDataset":
        """Build from ``[(label, X_t, y_t), ...]``."""
        labels, Xs, ys, idx = [], [], [], []
        for t, (label, Xt, yt) in enumerate(tasks):
            Xt = np.atleast_2d(np.asarray(Xt, dtype=float))
            yt = np.asarray(yt, dtype=float).ravel()
            if Xt.shape[0] != yt.shape[0]:
                raise DataError(f"task {label!r}: X has {Xt.shape[0]} rows, y has {yt.shape[0]}")
            labels.append(label)
            Xs.append(Xt)
            ys.append(yt)
            idx.append(np.full(len(yt), t, dtype=np.intp))
        if not Xs:
            raise DataError("no tasks given")
        if len({x.shape[1] for x in Xs}) != 1:
            raise DataError("all tasks must share the same feature dimension")
        D = Xs[0].shape[1]
        if feature_names is None:
            feature_names = [f"x{j + 1}" for j in range(D)]
        return cls(np.vstack(Xs), np.concatenate(ys), np.concatenate(idx), labels, feature_names)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_tasks(self) -> int:
        return len(self.task_labels)

    def task_sizes(self) -> np.ndarray:
        return np.bincount(self.task, minlength=self.n_tasks)

    def task_rows(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.task == t)

    @property
    def tasks(self) -> list:
        """``[(label, X_t, y_t), ...]`` in task-index order."""
        out = []
        for t, label in enumerate(self.task_labels):
            rows = self.task_rows(t)
            out.append((label, self.X[rows], self.y[rows]))
        return out

    def subset(self, rows) -> "MultiTaskDataset":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return MultiTaskDataset(
            self.X[rows], self.y[rows], self.task[rows], self.task_labels, self.feature_names
        )


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

IMPUTE_TASK_MEAN = "task-mean"
IMPUTE_DROP_ROW = "drop-row"


@dataclass
class PreprocessSpec:
    """Everything needed to replay preprocessing on new rows."""

    task_column: str
    target_column: str
    columns: tuple[str, ...]  # feature columns in output order (before expansion)
    numeric: tuple[str, ...]
    ranges: dict[str, tuple[float, float]]
    levels: dict[str, tuple[str, ...]]
    task_means: dict[str, dict[str, float]]
    global_means: dict[str, float]
    task_labels: tuple[str, ...]
    imputation: str = IMPUTE_TASK_MEAN
    outlier_iqr: float | None = 3.0
    outlier_fences: tuple[float, float] | None = None
    dropped_tasks: tuple[str, ...] = field(default=())

    @property
    def feature_names(self) -> tuple[str, ...]:
        names = []
        for c in self.columns:
            if c in self.levels:
                names.extend(f"{c}={lv}" for lv in self.levels[c])
            else:
                names.append(c)
        return tuple(names)

    # Flat key/value form, used by model files.
    def to_record(self) -> dict[str, str]:
        rec = {
            "task_column": self.task_column,
            "target_column": self.target_column,
            "columns": _join(self.columns),
            "numeric": _join(self.numeric),
            "imputation": self.imputation,
            "outlier_iqr": "none" if self.outlier_iqr is None else repr(self.outlier_iqr),
            "outlier_fences": "none"
            if self.outlier_fences is None
            else f"{self.outlier_fences[0]!r} {self.outlier_fences[1]!r}",
            "task_labels": _join(self.task_labels),
            "dropped_tasks": _join(self.dropped_tasks),
        }
        for c in self.numeric:
            lo, hi = self.ranges[c]
            rec[f"range.{c}"] = f"{lo!r} {hi!r}"
            rec[f"mean.{c}"] = repr(self.global_means[c])
            rec[f"task_mean.{c}"] = _join(
                f"{k}:{v!r}" for k, v in self.task_means[c].items()
            )
        for c, lv in self.levels.items():
            rec[f"levels.{c}"] = _join(lv)
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, str]) -> "PreprocessSpec":
        numeric = _split(rec["numeric"])
        columns = _split(rec["columns"])
        fences = None
        if rec["outlier_fences"] != "none":
            lo, hi = rec["outlier_fences"].split()
            fences = (float(lo), float(hi))
        task_means = {}
        for c in numeric:
            entries = {}
            for item in _split(rec[f"task_mean.{c}"]):
                k, v = item.rsplit(":", 1)
                entries[k] = float(v)
            task_means[c] = entries
        return cls(
            task_column=rec["task_column"],
            target_column=rec["target_column"],
            columns=columns,
            numeric=numeric,
            ranges={c: tuple(float(v) for v in rec[f"range.{c}"].split()) for c in numeric},
            levels={c: _split(rec[f"levels.{c}"]) for c in columns if c not in numeric},
            task_means=task_means,
            global_means={c: float(rec[f"mean.{c}"]) for c in numeric},
            task_labels=_split(rec["task_labels"]),
            imputation=rec["imputation"],
            outlier_iqr=None if rec["outlier_iqr"] == "none" else float(rec["outlier_iqr"]),
            outlier_fences=fences,
            dropped_tasks=_split(rec["dropped_tasks"]),
        )


# Labels are joined with a unit separator so commas and spaces survive.
_SEP = "\x1f"


def _join(items) -> str:
    return _SEP.join(items)


def _split(s: str) -> tuple[str, ...]:
    return tuple(s.split(_SEP)) if s else ()


def _row_filter(raw: RecordTable, spec: PreprocessSpec | None, outlier_iqr, imputation):
    """Boolean mask of rows kept for training, and the outlier fences used."""
    tasks = raw.columns[raw.task_column]
    target = raw.columns[raw.target_column]
    keep = np.array([t is not None for t in tasks]) & np.isfinite(target)

    if spec is not None:
        fences = spec.outlier_fences
    elif outlier_iqr is not None and keep.any():
        q1, q3 = np.percentile(target[keep], [25, 75])
        iqr = q3 - q1
        fences = (float(q1 - outlier_iqr * iqr), float(q3 + outlier_iqr * iqr))
    else:
        fences = None
    if fences is not None:
        with np.errstate(invalid="ignore"):
            keep &= (target >= fences[0]) & (target <= fences[1])

    if imputation == IMPUTE_DROP_ROW:
        for c, kind in raw.tags.items():
            if kind == NUMERIC:
                keep &= np.isfinite(raw.columns[c])
    return keep, fences


def preprocess(
    raw: RecordTable,
    imputation: str = IMPUTE_TASK_MEAN,
    outlier_iqr: float | None = 3.0,
) -> tuple[MultiTaskDataset, PreprocessSpec]:
    """Fit preprocessing on ``raw`` (the training rows) and transform them.

    Parameters
    ----------
    raw : RecordTable
        Training rows. Must contain a target column.
    imputation : {"task-mean", "drop-row"}
        How missing numeric cells are handled.
    outlier_iqr : float or None
        Rows whose target lies more than this many interquartile ranges
        beyond the quartiles are dropped. ``None`` disables the rule.

    Returns
    -------
    dataset, spec
    """
    if imputation not in (IMPUTE_TASK_MEAN, IMPUTE_DROP_ROW):
        raise ParameterError(f"unknown imputation policy {imputation!r}")
    if raw.target_column is None:
        raise SchemaError("training rows need a target column")
    if raw.n_rows == 0:
        raise DataError("no training rows")

    keep, fences = _row_filter(raw, None, outlier_iqr, imputation)
    if not keep.any():
        raise DataError("all rows were dropped during preprocessing")

    all_tasks = sorted({t for t in raw.columns[raw.task_column] if t is not None})
    tasks = [raw.columns[raw.task_column][i] for i in np.flatnonzero(keep)]
    task_labels = tuple(sorted(set(tasks)))
    dropped = tuple(t for t in all_tasks if t not in set(task_labels))
    if dropped:
        log.warning("tasks removed because no rows survived cleaning: %s", ", ".join(dropped))

    columns = tuple(raw.feature_columns)
    numeric = tuple(c for c in columns if raw.tags[c] == NUMERIC)
    task_arr = np.array(tasks, dtype=object)

    task_means, global_means = {}, {}
    for c in numeric:
        vals = raw.columns[c][keep]
        observed = np.isfinite(vals)
        global_means[c] = float(vals[observed].mean()) if observed.any() else 0.0
        per_task = {}
        for label in task_labels:
            sel = (task_arr == label) & observed
            if sel.any():
                per_task[label] = float(vals[sel].mean())
        task_means[c] = per_task

    levels = {}
    for c in columns:
        if raw.tags[c] == CATEGORICAL:
            col = raw.columns[c]
            levels[c] = tuple(sorted({col[i] for i in np.flatnonzero(keep) if col[i] is not None}))

    spec = PreprocessSpec(
        task_column=raw.task_column,
        target_column=raw.target_column,
        columns=columns,
        numeric=numeric,
        ranges={},
        levels=levels,
        task_means=task_means,
        global_means=global_means,
        task_labels=task_labels,
        imputation=imputation,
        outlier_iqr=outlier_iqr,
        outlier_fences=fences,
        dropped_tasks=dropped,
    )
    # Ranges are taken from the imputed values, through the same code path
    # apply_preprocess uses, so the two agree bit for bit.
    for c in numeric:
        imputed = _impute(raw.columns[c][keep], tasks, c, spec)
        spec.ranges[c] = (float(imputed.min()), float(imputed.max()))

    return apply_preprocess(raw, spec), spec


def _impute(values: np.ndarray, tasks: Sequence, column: str, spec: PreprocessSpec) -> np.ndarray:
    out = values.copy()
    missing = np.flatnonzero(~np.isfinite(out))
    means = spec.task_means[column]
    for i in missing:
        out[i] = means.get(tasks[i], spec.global_means[column])
    return out


def transform_features(raw: RecordTable, spec: PreprocessSpec, rows=None) -> np.ndarray:
    """Feature matrix for ``rows`` of ``raw`` (all rows by default).

    Unseen categorical levels and missing categorical cells give all-zero
    indicators. Values outside the training range are not clamped.
    """
    missing_cols = [c for c in spec.columns if c not in raw.columns]
    if missing_cols:
        raise SchemaError(f"input lacks feature columns used in training: {missing_cols}")
    if rows is None:
        rows = np.arange(raw.n_rows)
    rows = np.asarray(rows, dtype=np.intp)
    task_col = raw.columns[raw.task_column]
    tasks = [task_col[i] for i in rows]

    blocks = []
    for c in spec.columns:
        if c in spec.levels:
            col = raw.columns[c]
            lv = spec.levels[c]
            pos = {level: j for j, level in enumerate(lv)}
            block = np.zeros((len(rows), len(lv)))
            unseen = set()
            for r, i in enumerate(rows):
                v = col[i]
                if v in pos:
                    block[r, pos[v]] = 1.0
                elif v is not None:
                    unseen.add(v)
            if unseen:
                log.warning("column %r: unseen levels %s encoded as all-zero", c, sorted(unseen))
            blocks.append(block)
        else:
            if raw.tags.get(c) != NUMERIC:
                raise SchemaError(f"column {c!r} must be numeric")
            vals = _impute(raw.columns[c][rows], tasks, c, spec)
            lo, hi = spec.ranges[c]
            if hi > lo:
                scaled = (vals - lo) / (hi - lo)
            else:
                scaled = np.zeros_like(vals)
            blocks.append(scaled[:, None])
    if not blocks:
        return np.zeros((len(rows), 0))
    return np.hstack(blocks)


def apply_preprocess(raw: RecordTable, spec: PreprocessSpec, drop_rows: bool = True) -> MultiTaskDataset:
    """Replay a fitted preprocessing on ``raw``.

    With ``drop_rows`` the training-time row filters (missing task/target,
    stored outlier fences, drop-row imputation) are applied too, so that
    replaying on the training rows reproduces :func:`preprocess` exactly.
    Without it every row must carry a task id and a target.
    Tasks unknown to ``spec`` are appended after the training labels.
    """
    if raw.target_column is None:
        raise SchemaError("apply_preprocess needs a target column; use transform_features")
    if drop_rows:
        keep, _ = _row_filter(raw, spec, None, spec.imputation)
    else:
        keep = np.ones(raw.n_rows, dtype=bool)
    rows = np.flatnonzero(keep)
    if len(rows) == 0:
        raise DataError("no rows left after preprocessing")

    task_col = raw.columns[raw.task_column]
    tasks = [task_col[i] for i in rows]
    if any(t is None for t in tasks):
        raise DataError("rows without a task id")
    extra = sorted(set(tasks) - set(spec.task_labels))
    labels = tuple(spec.task_labels) + tuple(extra)
    index = {label: t for t, label in enumerate(labels)}

    X = transform_features(raw, spec, rows)
    y = raw.columns[raw.target_column][rows]
    task = np.array([index[t] for t in tasks], dtype=np.intp)
    return MultiTaskDataset(X, y, task, labels, spec.feature_names)


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


def fold_assignment(ds: MultiTaskDataset, k: int, seed) -> np.ndarray:
    """Test-fold id for every row, stratified by task.

    Each task's rows are shuffled and dealt round-robin into folds starting
    at a random offset. A task with fewer than ``k`` rows therefore lands in
    only ``n_t`` test folds and stays in the remaining training splits.
    """
    if int(k) != k or k < 2:
        raise ParameterError(f"k must be an integer >= 2, got {k}")
    rng = derive_rng(seed, "folds")
    fold = np.empty(ds.n_samples, dtype=np.intp)
    for t in range(ds.n_tasks):
        rows = ds.task_rows(t)
        if len(rows) == 0:
            continue
        perm = rng.permutation(rows)
        offset = int(rng.integers(k))
        fold[perm] = (offset + np.arange(len(perm))) % k
    return fold


def split_folds(ds: MultiTaskDataset, k: int, seed) -> list[tuple[MultiTaskDataset, MultiTaskDataset]]:
    fold = fold_assignment(ds, k, seed)
    return [(ds.subset(fold != f), ds.subset(fold == f)) for f in range(k)]


def holdout_split(task: np.ndarray, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per-task random holdout; returns (fit_rows, validation_rows).

    ``round(fraction * n_t)`` rows of each task go to validation, but a task
    always keeps at least one fitting row.
    """
    fit, val = [], []
    for t in np.unique(task):
        rows = np.flatnonzero(task == t)
        perm = rng.permutation(rows)
        n_val = min(int(round(fraction * len(rows))), len(rows) - 1)
        val.append(perm[:n_val])
        fit.append(perm[n_val:])
    if not fit:
        return np.array([], dtype=np.intp), np.array([], dtype=np.intp)
    return np.sort(np.concatenate(fit)), np.sort(np.concatenate(val))


def dataset_to_csv(ds: MultiTaskDataset, fh, task_header: str = "task_id", target_header: str = "target") -> None:
    """Write ``ds`` in the ingestion schema (task id, features, target)."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow([task_header, *ds.feature_names, target_header])
    labels = ds.task_labels
    for i in range(ds.n_samples):
        writer.writerow([labels[ds.task[i]], *map(repr, ds.X[i].tolist()), repr(float(ds.y[i]))])
