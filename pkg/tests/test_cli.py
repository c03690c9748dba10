import csv
import json

import pytest

from intentplan.cli import main
from intentplan.config import load_config

FAST = ["--set", "synth.n_events=10", "--set", "train.iterations=40", "--set", "eval.plots=false",
        "-q"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, fit, model = root / "data", root / "fit", root / "model"
    assert run("synth", "--seed", 3, "--out", data, *FAST) == 0
    ev = data / "events.csv"
    assert run("fit", "--events", ev, "--seed", 3, "--out", fit, *FAST) == 0
    assert run("train", "--events", ev, "--corridor", fit / "corridor.json", "--seed", 3,
               "--out", model, *FAST) == 0
    return root


def test_outputs_written(pipeline):
    for rel in ("data/events.csv", "data/manifest.json", "fit/corridor.json", "model/model.json",
                "model/training_log.csv", "model/training_summary.json",
                "model/effective_config.yaml"):
        assert (pipeline / rel).is_file(), rel
    summary = json.loads((pipeline / "model/training_summary.json").read_text())
    assert summary["seed"] == 3
    assert json.loads((pipeline / "data/manifest.json").read_text())["seed"] == 3


def test_effective_config_reloads(pipeline):
    path = pipeline / "model/effective_config.yaml"
    cfg = load_config(path)
    assert cfg.seed == 3 and cfg.train.iterations == 40
    assert cfg.dump() == path.read_text()


def test_train_byte_identical(pipeline, tmp_path):
    assert run("train", "--events", pipeline / "data/events.csv", "--corridor",
               pipeline / "fit/corridor.json", "--seed", 3, "--out", tmp_path, *FAST) == 0
    assert (tmp_path / "model.json").read_bytes() == (pipeline / "model/model.json").read_bytes()


def test_eval_report_and_recomputation(pipeline, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ("eval", "--events", pipeline / "data/events.csv", "--model",
            pipeline / "model/model.json", "--seed", 3, *FAST)
    assert run(*args, "--out", a) == 0
    assert run(*args, "--out", b) == 0
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    metrics = json.loads((a / "metrics.json").read_text())
    with open(a / "per_event.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(metrics["event_ids"]) == 2
    for key in ("s_sl", "travel_time"):
        vals = [float(r[f"plan_{key}"]) for r in rows if r[f"plan_{key}"]]
        assert metrics[key]["planned"]["mean"] == pytest.approx(sum(vals) / len(vals), rel=1e-12)
    with open(a / "metrics_long.csv", newline="") as fh:
        long = list(csv.DictReader(fh))
    assert {r["metric"] for r in long} >= {"s_sl", "pet", "coverage_ratio"}


def test_simulate_threads_agree(pipeline, tmp_path):
    args = ("simulate", "--events", pipeline / "data/events.csv", "--model",
            pipeline / "model/model.json", "--split", "all", "--seed", 1, *FAST)
    assert run(*args, "--out", tmp_path / "one", "--threads", 1) == 0
    assert run(*args, "--out", tmp_path / "two", "--threads", 2) == 0
    one = sorted((tmp_path / "one/executed").iterdir())
    assert len(one) == 10
    for f in one:
        assert f.read_bytes() == (tmp_path / "two/executed" / f.name).read_bytes()


def test_plan_command(pipeline, tmp_path):
    assert run("plan", "--model", pipeline / "model/model.json", "--state", "62,0.5,6",
               "--decision", "proceed", "--events", pipeline / "data/events.csv",
               "--event-id", "e0000", "--out", tmp_path, *FAST) == 0
    doc = json.loads((tmp_path / "plan.json").read_text())
    assert doc["region"] == "intersection" and doc["seed"] == 0
    with open(tmp_path / "candidates.csv", newline="") as fh:
        assert sum(1 for _ in fh) == doc["n_candidates"] + 1
    assert (tmp_path / "plan_trajectory.csv").is_file()


@pytest.mark.parametrize("argv", [
    ["fit", "--events", "/nonexistent.csv"],
    ["synth", "--set", "train.learning_rate=-1"],
    ["synth", "--set", "novalue"],
    ["synth", "--config", "/nonexistent.yaml"],
])
def test_usage_errors_exit_one(argv, tmp_path):
    assert run(*argv, "--out", tmp_path, "-q") == 1


@pytest.mark.parametrize("argv", [["bogus"], ["train", "--events", "x.csv"]])
def test_bad_arguments_exit_one(argv):
    with pytest.raises(SystemExit) as err:
        run(*argv)
    assert err.value.code == 1


def test_runtime_error_exits_two(pipeline, tmp_path):
    bad = tmp_path / "bad.csv"
    text = (pipeline / "data/events.csv").read_text().splitlines()
    text.insert(6, text[5])  # repeated frame
    bad.write_text("\n".join(text) + "\n")
    assert run("fit", "--events", bad, "--out", tmp_path / "o", *FAST) == 2


def test_no_partial_files_left(pipeline):
    leftovers = [p for p in pipeline.rglob("*.tmp")] + [p for p in pipeline.rglob(".*.*")]
    assert leftovers == []
