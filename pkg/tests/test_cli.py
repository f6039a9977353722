import csv

import numpy as np
import pytest

from mtlworkload.cli import main, parse_config, read_config_file, resolve_config
from mtlworkload.data import load_csv
from mtlworkload.modelio import load_model, model_to_text


def run(*args):
    return main([str(a) for a in args])


def _small_sim(path, **kw):
    opts = {"n_tasks": 6, "n_per_task": 30, "n_features": 4, "support": 2, "seed": 1, **kw}
    argv = ["simulate", "--output", path]
    for k, v in opts.items():
        argv += ["--" + k.replace("_", "-"), v]
    assert run(*argv) == 0
    return path


def _blob_csv(path, centers, seed=0, n=60):
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        fh.write("task_id,a,b\n")
        for c in centers:
            for x in c + 0.3 * rng.normal(size=(n, 2)):
                fh.write(f"t1,{float(x[0])!r},{float(x[1])!r}\n")
    return path


# -- simulate ----------------------------------------------------------------


def test_simulate_default_line_count(tmp_path):
    out = tmp_path / "sim.csv"
    assert run("simulate", "--output", out) == 0
    with open(out) as fh:
        assert sum(1 for _ in fh) == 130_001
    assert (tmp_path / "sim.csv.truth").exists()


def test_simulate_byte_identical(tmp_path):
    a = _small_sim(tmp_path / "a.csv")
    b = _small_sim(tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.truth").read_bytes() == (tmp_path / "b.csv.truth").read_bytes()


def test_simulate_invalid_config_writes_nothing(tmp_path, capsys):
    out = tmp_path / "bad.csv"
    code = run("simulate", "--output", out, "--n-features", 3, "--support", 5)
    assert code != 0 and code == 1
    assert not out.exists() and list(tmp_path.iterdir()) == []
    assert "support" in capsys.readouterr().err


def test_simulate_requires_output():
    assert run("simulate") == 1


# -- gapstat -----------------------------------------------------------------


def test_gapstat_three_blobs(tmp_path, capsys):
    p = _blob_csv(tmp_path / "blobs.csv", [(0, 0), (10, 0), (5, 9)])
    assert run("gapstat", "--input", p, "--gap-refs", 10) == 0
    assert capsys.readouterr().out.strip().endswith("# k* = 3")


def test_gapstat_constant(tmp_path, capsys):
    p = tmp_path / "c.csv"
    p.write_text("task_id,a,b\n" + "t1,1.0,2.0\n" * 10)
    assert run("gapstat", "--input", p) == 0
    assert "# k* = 1" in capsys.readouterr().out


def test_gapstat_missing_file(tmp_path):
    assert run("gapstat", "--input", tmp_path / "nope.csv") == 2


# -- fit / predict -----------------------------------------------------------


def _read_predictions(path):
    with open(path) as fh:
        return np.array([float(r["prediction"]) for r in csv.DictReader(fh)])


def test_unlimited_tree_memorises(tmp_path):
    data = _small_sim(tmp_path / "d.csv")
    model, pred = tmp_path / "m.txt", tmp_path / "p.csv"
    assert run("fit", "--input", data, "--model", model, "--approach", "single", "--method", "tree",
               "--depths", "none", "--min-samples-leaf", 1, "--outlier-iqr", "none", "--tune", "false") == 0
    assert run("predict", "--input", data, "--model", model, "--output", pred) == 0
    y = load_csv(data).columns["target"]
    p = _read_predictions(pred)
    assert np.mean((p - y) ** 2) == 0.0


@pytest.mark.parametrize("approach", ["single", "cluster", "per_task", "mtl"])
def test_fit_predict_each_approach(tmp_path, approach):
    data = _small_sim(tmp_path / "d.csv")
    model, pred = tmp_path / "m.txt", tmp_path / "p.csv"
    assert run("fit", "--input", data, "--model", model, "--approach", approach, "--method", "ridge", "--k", 2) == 0
    assert run("predict", "--input", data, "--model", model, "--output", pred) == 0
    p = _read_predictions(pred)
    y = load_csv(data).columns["target"]
    assert len(p) == len(y)
    assert np.mean((p - y) ** 2) < np.var(y)


def test_model_file_round_trip_bit_exact(tmp_path):
    data = _small_sim(tmp_path / "d.csv")
    m1 = tmp_path / "m1.txt"
    assert run("fit", "--input", data, "--model", m1) == 0
    first = m1.read_bytes()
    assert run("fit", "--input", data, "--model", m1) == 0
    assert m1.read_bytes() == first
    model, spec, meta = load_model(m1)
    assert model_to_text(model, spec, meta) == m1.read_text()


def test_predict_wrong_features(tmp_path, capsys):
    data = _small_sim(tmp_path / "d.csv")
    other = _small_sim(tmp_path / "o.csv", n_features=3)
    model = tmp_path / "m.txt"
    assert run("fit", "--input", data, "--model", model, "--approach", "single", "--method", "ridge") == 0
    assert run("predict", "--input", other, "--model", model, "--output", tmp_path / "p.csv") == 2
    assert "x4" in capsys.readouterr().err


def test_predict_unseen_task_named(tmp_path, capsys):
    data = _small_sim(tmp_path / "d.csv")
    model = tmp_path / "m.txt"
    assert run("fit", "--input", data, "--model", model, "--approach", "mtl") == 0
    probe = tmp_path / "probe.csv"
    lines = data.read_text().splitlines()
    probe.write_text(lines[0] + "\n" + lines[1].replace("t001", "hospital_X", 1) + "\n")
    assert run("predict", "--input", probe, "--model", model, "--output", tmp_path / "p.csv") == 2
    assert "hospital_X" in capsys.readouterr().err


def test_predict_missing_model(tmp_path):
    data = _small_sim(tmp_path / "d.csv")
    assert run("predict", "--input", data, "--model", tmp_path / "none.txt", "--output", tmp_path / "p.csv") == 2


# -- benchmark ---------------------------------------------------------------


def test_benchmark_smallest_run(tmp_path):
    data = _small_sim(tmp_path / "d.csv")
    out = tmp_path / "out"
    assert run("benchmark", "--input", data, "--out-dir", out, "--approaches", "single",
               "--replications", 1, "--folds", 2, "--n-trees", 3) == 0
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["lasso", "ridge", "tree", "forest", "best"]
    assert {p.name for p in out.iterdir()} == {"report.csv", "report.md", "folds.csv", "config.txt"}


def test_benchmark_deterministic_and_config_replays(tmp_path):
    data = _small_sim(tmp_path / "d.csv")
    args = ["--input", data, "--approaches", "single,cluster,mtl", "--methods", "lasso,tree",
            "--replications", 2, "--folds", 3, "--k", 2, "--seed", 4]
    assert run("benchmark", "--out-dir", tmp_path / "a", *args) == 0
    assert run("benchmark", "--out-dir", tmp_path / "b", *args) == 0
    for name in ("report.csv", "report.md", "folds.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def settings(d):
        return [ln for ln in (d / "config.txt").read_text().splitlines() if not ln.startswith("out_dir")]
    assert settings(tmp_path / "a") == settings(tmp_path / "b")
    # the recorded config alone reproduces the run
    assert run("benchmark", "--config", tmp_path / "a" / "config.txt", "--out-dir", tmp_path / "c") == 0
    for name in ("report.csv", "folds.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nfolds = 4\nseed = 9\n")
    raw = resolve_config("benchmark", {"seed": "11"}, read_config_file(cfg))
    parsed = parse_config(raw)
    assert parsed["folds"] == 4 and parsed["seed"] == 11 and parsed["replications"] == 50


def test_bad_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("flods = 4\n")
    assert run("benchmark", "--config", cfg, "--input", "x", "--out-dir", tmp_path) == 1
    assert run("benchmark", "--config", tmp_path / "missing.cfg") == 1
    assert run("benchmark", "--folds", "many") == 1
    assert run("nonsense") == 1


def test_benchmark_bad_approach(tmp_path):
    data = _small_sim(tmp_path / "d.csv")
    assert run("benchmark", "--input", data, "--out-dir", tmp_path / "o", "--approaches", "magic") == 1
