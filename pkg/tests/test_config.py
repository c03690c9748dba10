import json
import os

import pytest

from intentplan.artifacts import atomic_open, csv_text, write_csv, write_json
from intentplan.config import ConfigError, RunConfig, config_from_dict, load_config


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg == RunConfig()
        assert cfg.train.learning_rate == 0.05 and cfg.train.l2 == 0.01
        assert cfg.train.iterations == 1000 and cfg.eval.ahl_n == 3
        assert cfg.eval.coverage_cell == 0.5

    def test_dump_reloads_equal(self, tmp_path):
        cfg = load_config(overrides={"seed": 7, "train.iterations": 12, "planning.mode": "sample",
                                     "corridor.flat_half_width": 1.5})
        path = tmp_path / "effective.yaml"
        path.write_text(cfg.dump())
        back = load_config(path)
        assert back == cfg
        assert back.dump() == cfg.dump()

    def test_planner_and_train_views(self):
        cfg = config_from_dict({"seed": 4, "planning": {"replan_dt": 1.0}})
        pc = cfg.planner_config(7.5)
        assert pc.v_target == 7.5 and pc.replan_dt == 1.0
        assert cfg.train_config().seed == 4

    @pytest.mark.parametrize("data, where", [
        ({"train": {"learning_rate": 0}}, "train.learning_rate"),
        ({"train": {"iterations": 2.5}}, "train.iterations"),
        ({"data": {"split_ratio": 1.0}}, "data.split_ratio"),
        ({"planning": {"mode": "greedy"}}, "planning.mode"),
        ({"eval": {"bogus": 1}}, "eval.bogus"),
        ({"bounds": {"v_min": 5, "v_max": 1}}, "bounds"),
        ({"train": 3}, "train"),
    ])
    def test_errors_name_field(self, data, where):
        with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
            config_from_dict(data)

    def test_missing_files(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.yaml")
        with pytest.raises(ConfigError, match="scenario"):
            load_config(overrides={"scenario": str(tmp_path / "none.json")})

    def test_invalid_yaml(self, tmp_path):
        (tmp_path / "c.yaml").write_text("seed: [1,\n")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_config(tmp_path / "c.yaml")


class TestArtifacts:
    def test_json_sorted_and_finite(self, tmp_path):
        write_json(tmp_path / "a.json", {"b": float("nan"), "a": [1.0, float("inf")]})
        text = (tmp_path / "a.json").read_text()
        assert json.loads(text) == {"a": [1.0, None], "b": None}
        assert text.index('"a"') < text.index('"b"')

    def test_failed_write_leaves_target_untouched(self, tmp_path):
        target = tmp_path / "keep.txt"
        target.write_text("old")
        with pytest.raises(RuntimeError):
            with atomic_open(target) as fh:
                fh.write("partial")
                raise RuntimeError("boom")
        assert target.read_text() == "old"
        assert os.listdir(tmp_path) == ["keep.txt"]

    def test_csv_round_trips_floats(self, tmp_path):
        rows = [[0.1 + 0.2, None, "x"], [1e-300, float("nan"), 3]]
        write_csv(tmp_path / "r.csv", ["a", "b", "c"], rows)
        text = (tmp_path / "r.csv").read_bytes().decode()
        assert text == csv_text(["a", "b", "c"], rows)
        assert float(text.splitlines()[1].split(",")[0]) == 0.1 + 0.2
