"""Command-line front end: ``mtlworkload <command> [options]``.

Commands: ``simulate``, ``gapstat``, ``fit``, ``predict``, ``benchmark``.

Every option can also come from a flat config file (``--config FILE``) of
``key = value`` lines, ``#`` starting a comment. Precedence is command line,
then config file, then built-in defaults. Option ``--some-key`` corresponds
to config key ``some_key``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import io
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import modelio, pipeline, simgen
from .clustering import gap_statistic
from .data import TARGET, RecordTable, Schema, apply_preprocess, load_csv, preprocess, transform_features
from .errors import DataError, MetricError, NumericError, ParameterError, SchemaError, UnknownTaskError
from .mtl import WeightMatrix, mtl_predict
from .seeding import derive_int

log = logging.getLogger("mtlworkload")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ParameterError):
    pass


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _list(s):
    return tuple(x.strip() for x in str(s).split(",") if x.strip())


def _opt_float(s):
    return None if str(s).strip().lower() in ("none", "auto") else float(s)


def _opt_int(s):
    return None if str(s).strip().lower() in ("none", "auto") else int(s)


def _depths(s):
    return tuple(None if d.lower() == "none" else int(d) for d in _list(s))


def _k(s):
    return "auto" if str(s).strip().lower() == "auto" else int(s)


# key -> (default, parser, help)
KEYS = {
    "input": ("", str, "input CSV path"),
    "output": ("", str, "output file path"),
    "out_dir": ("", str, "output directory (benchmark)"),
    "truth": ("", str, "ground-truth output path (simulate; default <output>.truth)"),
    "model": ("", str, "model file path"),
    "task_column": ("task_id", str, "task-id column name"),
    "target_column": ("target", str, "target column name"),
    "numeric": ("", _list, "comma-separated numeric columns (empty: all untagged columns)"),
    "categorical": ("", _list, "comma-separated categorical columns"),
    "imputation": ("task-mean", str, "missing numeric cells: task-mean or drop-row"),
    "outlier_iqr": ("3.0", _opt_float, "target outlier rule in IQRs, or none"),
    "approaches": ("single,cluster,mtl", _list, "benchmark approaches: single, cluster, per_task, mtl"),
    "methods": ("lasso,ridge,tree,forest", _list, "single-task methods"),
    "approach": ("mtl", str, "fit: one of single, cluster, per_task, mtl"),
    "method": ("lasso", str, "fit: single-task method for single/cluster/per_task"),
    "k": ("auto", _k, "cluster count, or auto for the gap statistic"),
    "k_max": ("6", int, "largest cluster count tried by the gap statistic"),
    "gap_refs": ("20", int, "reference data sets for the gap statistic"),
    "fix_k": ("false", _bool, "choose the cluster count once on all rows instead of per fold"),
    "task_in_clustering": ("false", _bool, "append task one-hot columns to the clustering features"),
    "n_lambdas": ("20", int, "penalty grid size (lasso, ridge, mtl)"),
    "lambda_ratio": ("auto", _opt_float, "lasso/ridge grid bottom relative to the top"),
    "mtl_lambda_ratio": ("0.001", float, "mtl grid bottom relative to lambda_max"),
    "mtl_tol": ("1e-9", float, "mtl relative objective tolerance"),
    "mtl_max_iter": ("20000", int, "mtl iteration cap"),
    "sample_weighting": ("false", _bool, "scale each task's loss by 1/n_t in mtl"),
    "val_fraction": ("0.2", float, "inner validation share of each task's training rows"),
    "tune": ("true", _bool, "tune hyperparameters on the inner validation split"),
    "depths": ("2,4,6,8", _depths, "tree depth grid (none = unlimited)"),
    "min_samples_leaf": ("5", int, "minimum rows per tree leaf"),
    "n_trees": ("100", int, "trees per forest"),
    "m_try": ("auto", _opt_int, "features tried per forest split (auto: ceil(D/3))"),
    "folds": ("10", int, "cross-validation folds"),
    "replications": ("50", int, "cross-validation replications"),
    "paper_literal": ("false", _bool, "select the best method on test MSE instead of validation MSE"),
    "seed": ("0", int, "top-level seed"),
    "n_tasks": ("130", int, "simulate: tasks"),
    "n_per_task": ("1000", int, "simulate: rows per task"),
    "n_features": ("30", int, "simulate: numeric features"),
    "support": ("5", int, "simulate: features in the shared support"),
    "eta": ("0.2", float, "simulate: task-specific weight spread"),
    "sigma": ("1.0", float, "simulate: noise standard deviation"),
    "intercept_scale": ("1.0", float, "simulate: task intercept standard deviation"),
    "n_categorical": ("0", int, "simulate: categorical columns"),
    "n_levels": ("3", int, "simulate: levels per categorical column"),
}

_SCHEMA = ["task_column", "target_column", "numeric", "categorical"]
_PREP = ["imputation", "outlier_iqr"]
_TUNING = ["n_lambdas", "lambda_ratio", "mtl_lambda_ratio", "mtl_tol", "mtl_max_iter", "sample_weighting",
           "val_fraction", "tune", "depths", "min_samples_leaf", "n_trees", "m_try"]
_CLUSTER = ["k", "k_max", "gap_refs", "task_in_clustering"]
COMMAND_KEYS = {
    "simulate": ["output", "truth", "n_tasks", "n_per_task", "n_features", "support", "eta", "sigma",
                 "intercept_scale", "n_categorical", "n_levels", "seed"],
    "gapstat": ["input", "output", *_SCHEMA, *_PREP, "k_max", "gap_refs", "seed"],
    "fit": ["input", "model", *_SCHEMA, *_PREP, "approach", "method", *_CLUSTER, *_TUNING, "seed"],
    "predict": ["input", "model", "output"],
    "benchmark": ["input", "out_dir", *_SCHEMA, *_PREP, "approaches", "methods", *_CLUSTER, "fix_k",
                  *_TUNING, "folds", "replications", "paper_literal", "seed"],
}


def read_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            if key not in KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out


def resolve_config(command: str, cli: dict, file_values: dict | None = None) -> dict:
    """Merge defaults, config file and command line; returns raw strings."""
    keys = COMMAND_KEYS[command]
    merged = {k: KEYS[k][0] for k in keys}
    for k, v in (file_values or {}).items():
        if k in merged:
            merged[k] = v
    for k, v in cli.items():
        if v is not None and k in merged:
            merged[k] = v
    return merged


def parse_config(raw: dict) -> dict:
    out = {}
    for k, v in raw.items():
        try:
            out[k] = KEYS[k][1](v)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {k}: {v!r} ({exc})") from None
    return out


def config_text(command: str, raw: dict) -> str:
    lines = [f"# resolved configuration for: mtlworkload {command} --config <this file>"]
    lines += [f"{k} = {raw[k]}" for k in COMMAND_KEYS[command]]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _require(cfg, *keys):
    for k in keys:
        if not cfg[k]:
            raise ConfigError(f"--{k.replace('_', '-')} is required")


def _schema(cfg) -> Schema:
    return Schema(cfg["task_column"], cfg["target_column"], cfg["numeric"] or None, cfg["categorical"])


def _check_input(path):
    if not os.path.isfile(path):
        raise DataError(f"input file not found: {path}")


def _specs(cfg, methods):
    common = {"tune": cfg["tune"], "val_fraction": cfg["val_fraction"]}
    linear = {**common, "n_lambdas": cfg["n_lambdas"], "lambda_ratio": cfg["lambda_ratio"]}
    tree = {**common, "depths": cfg["depths"], "min_samples_leaf": cfg["min_samples_leaf"]}
    params = {
        "lasso": linear,
        "ridge": linear,
        "tree": tree,
        "forest": {**tree, "n_trees": cfg["n_trees"], "m_try": cfg["m_try"]},
    }
    out = []
    for m in methods:
        if m not in params:
            raise ConfigError(f"unknown method {m!r}; choose from {pipeline.METHODS}")
        out.append(pipeline.RegressorSpec(m, dict(params[m])))
    return out


def _mtl_tuning(cfg):
    return pipeline.MtlTuning(
        n_lambdas=cfg["n_lambdas"], lambda_ratio=cfg["mtl_lambda_ratio"], val_fraction=cfg["val_fraction"],
        tune=cfg["tune"], tol=cfg["mtl_tol"], max_iter=cfg["mtl_max_iter"],
        sample_weighting=cfg["sample_weighting"],
    )


def _load_training(cfg):
    _check_input(cfg["input"])
    raw = load_csv(cfg["input"], _schema(cfg))
    return preprocess(raw, cfg["imputation"], cfg["outlier_iqr"])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg, raw_cfg, out=None):
    out = out or sys.stdout
    _require(cfg, "output")
    sim = simgen.SimConfig(
        n_tasks=cfg["n_tasks"], n_per_task=cfg["n_per_task"], n_features=cfg["n_features"],
        support=cfg["support"], eta=cfg["eta"], sigma=cfg["sigma"], intercept_scale=cfg["intercept_scale"],
        n_categorical=cfg["n_categorical"], n_levels=cfg["n_levels"], seed=cfg["seed"],
    )
    table, truth = simgen.simulate_records(sim)
    buf = io.StringIO()
    simgen.write_records_csv(table, buf)
    truth_path = cfg["truth"] or cfg["output"] + ".truth"
    h, a = simgen.truth_parts(truth, sim)
    truth_text = modelio.dumps(h, a)
    modelio.write_atomic(cfg["output"], buf.getvalue())
    modelio.write_atomic(truth_path, truth_text)
    print(f"wrote {table.n_rows} rows ({sim.n_tasks} tasks) to {cfg['output']}; ground truth in {truth_path}",
          file=out)


def _features_for_clustering(cfg):
    _check_input(cfg["input"])
    raw = load_csv(cfg["input"], _schema(cfg), require_target=False)
    if raw.target_column is None:
        # Features only: a placeholder target lets the usual scaling run.
        tags = {**raw.tags, "__target__": TARGET}
        cols = {**raw.columns, "__target__": np.zeros(raw.n_rows)}
        raw = RecordTable(tags, cols)
        ds, _ = preprocess(raw, cfg["imputation"], None)
    else:
        ds, _ = preprocess(raw, cfg["imputation"], cfg["outlier_iqr"])
    return ds


def cmd_gapstat(cfg, raw_cfg, out=None):
    out = out or sys.stdout
    _require(cfg, "input")
    ds = _features_for_clustering(cfg)
    res = gap_statistic(ds.X, k_max=cfg["k_max"], B=cfg["gap_refs"], seed=cfg["seed"])
    lines = ["k,gap,s,log_w,log_w_ref"]
    for i, k in enumerate(res.ks):
        vals = (res.gap[i], res.s[i], res.log_w[i], res.log_w_ref[i])
        lines.append(f"{k}," + ",".join(repr(float(v)) for v in vals))
    lines.append(f"# k* = {res.k_best}")
    text = "\n".join(lines) + "\n"
    if cfg["output"]:
        modelio.write_atomic(cfg["output"], text)
    out.write(text)
    return res


def cmd_fit(cfg, raw_cfg, out=None):
    out = out or sys.stdout
    _require(cfg, "input", "model")
    ds, spec = _load_training(cfg)
    approach, seed = cfg["approach"], cfg["seed"]
    if approach == pipeline.MTL:
        model, info = pipeline.fit_mtl_tuned(ds, _mtl_tuning(cfg), derive_int(seed, "mtl"))
        summary = f"lambda={info['lambda']!r}, {len(model.nonzero_columns())} active features"
    else:
        specs = _specs(cfg, [cfg["method"]])
        if approach == pipeline.SINGLE:
            model = pipeline.fit_single_task(ds.X, ds.y, ds.task, specs, seed)[cfg["method"]]
        elif approach == pipeline.CLUSTER:
            model = pipeline.fit_cluster_based(
                ds.X, ds.y, ds.task, cfg["k"], specs, seed, k_max=cfg["k_max"], gap_refs=cfg["gap_refs"],
                task_in_clustering=cfg["task_in_clustering"], task_labels=ds.task_labels,
            )
        elif approach == pipeline.PER_TASK:
            model = pipeline.fit_per_task(ds, specs, seed)
        else:
            raise ConfigError(f"unknown approach {approach!r}")
        summary = f"method={cfg['method']}"
    meta = {"approach": approach, "method": cfg["method"], "task_labels": list(ds.task_labels),
            "config": config_text("fit", raw_cfg)}
    modelio.save_model(cfg["model"], model, spec, meta)
    print(f"fitted {approach} model on {ds.n_samples} rows, {ds.n_tasks} tasks ({summary}); saved to {cfg['model']}",
          file=out)


def predict_rows(model, spec, meta, raw: RecordTable) -> np.ndarray:
    X = transform_features(raw, spec)
    tasks = raw.columns[raw.task_column]
    labels = tuple(meta["task_labels"])
    approach = meta["approach"]
    if approach == pipeline.MTL:
        out = np.empty(raw.n_rows)
        for label in dict.fromkeys(tasks):
            rows = np.array([i for i, t in enumerate(tasks) if t == label])
            if label is None:
                raise DataError("rows without a task id cannot be scored by a multi-task model")
            out[rows] = mtl_predict(model, label, X[rows])
        return out
    index = {lab: t for t, lab in enumerate(labels)}
    task_idx = np.array([index.get(t, -1) for t in tasks], dtype=np.intp)
    if approach == pipeline.SINGLE:
        return model.predict(X)
    if approach == pipeline.CLUSTER:
        return pipeline.predict_cluster_based(model, X, meta["method"], task_idx)
    if approach == pipeline.PER_TASK:
        return model.predict(X, task_idx, meta["method"])
    raise SchemaError(f"model file has unknown approach {approach!r}")


def cmd_predict(cfg, raw_cfg, out=None):
    out = out or sys.stdout
    _require(cfg, "input", "model", "output")
    _check_input(cfg["input"])
    if not os.path.isfile(cfg["model"]):
        raise DataError(f"model file not found: {cfg['model']}")
    model, spec, meta = modelio.load_model(cfg["model"])
    if spec is None:
        raise SchemaError("model file has no preprocessing record")
    schema = Schema(spec.task_column, spec.target_column, spec.numeric, tuple(spec.levels))
    raw = load_csv(cfg["input"], schema, require_target=False)
    pred = predict_rows(model, spec, meta, raw)
    buf = io.StringIO()
    buf.write(f"row,{spec.task_column},prediction\n")
    tasks = raw.columns[raw.task_column]
    for i, p in enumerate(pred.tolist()):
        buf.write(f"{i},{'' if tasks[i] is None else tasks[i]},{p!r}\n")
    modelio.write_atomic(cfg["output"], buf.getvalue())
    print(f"wrote {len(pred)} predictions to {cfg['output']}", file=out)
    return pred


def cmd_benchmark(cfg, raw_cfg, out=None):
    out = out or sys.stdout
    _require(cfg, "input", "out_dir")
    ds, _ = _load_training(cfg)
    approaches = cfg["approaches"]
    for a in approaches:
        if a not in pipeline.APPROACHES:
            raise ConfigError(f"unknown approach {a!r}; choose from {pipeline.APPROACHES}")
    opts = pipeline.BenchmarkOptions(
        approaches=approaches, specs=tuple(_specs(cfg, cfg["methods"])), k=cfg["k"], k_max=cfg["k_max"],
        gap_refs=cfg["gap_refs"], fix_k=cfg["fix_k"], task_in_clustering=cfg["task_in_clustering"],
        paper_literal=cfg["paper_literal"], mtl=_mtl_tuning(cfg),
    )
    report = pipeline.cross_validate(ds, approaches, cfg["folds"], cfg["replications"], cfg["seed"], opts)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    files = {
        "report.csv": report.to_csv(),
        "report.md": report.to_markdown(),
        "folds.csv": report.folds_csv(),
        "config.txt": config_text("benchmark", raw_cfg),
    }
    for name, text in files.items():
        modelio.write_atomic(os.path.join(cfg["out_dir"], name), text)
    out.write(files["report.md"])
    return report


COMMANDS = {
    "simulate": (cmd_simulate, "write a synthetic multi-task CSV and its ground truth"),
    "gapstat": (cmd_gapstat, "gap statistic per cluster count and the chosen k"),
    "fit": (cmd_fit, "fit one model and save it"),
    "predict": (cmd_predict, "predict every row of a CSV with a saved model"),
    "benchmark": (cmd_benchmark, "repeated k-fold comparison of approaches and methods"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtlworkload", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
        for key in COMMAND_KEYS[name]:
            default, _, key_help = KEYS[key]
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                           help=f"{key_help} (default: {default or 'unset'})")
    return parser


def _exit_code(exc) -> int:
    if isinstance(exc, pipeline.FoldError) and exc.__cause__ is not None:
        return _exit_code(exc.__cause__)
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (SchemaError, DataError, MetricError, UnknownTaskError, OSError)):
        return EXIT_DATA
    if isinstance(exc, (ParameterError, ValueError)):
        return EXIT_USAGE
    return EXIT_NUMERIC if isinstance(exc, (FloatingPointError, np.linalg.LinAlgError)) else EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cli = {k: v for k, v in vars(args).items() if k in KEYS}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        raw_cfg = resolve_config(args.command, cli, file_values)
        cfg = parse_config(raw_cfg)
        COMMANDS[args.command][0](cfg, raw_cfg)
    except Exception as exc:  # every failure becomes a message and an exit code
        if isinstance(exc, AssertionError):
            raise
        code = _exit_code(exc)
        if args.config and isinstance(exc, OSError) and getattr(exc, "filename", None) == args.config:
            code = EXIT_USAGE
        print(f"mtlworkload {args.command}: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
