import csv

import numpy as np
import pytest

from intentplan.data import (DataError, VehicleLog, check_consistency, events_from_rows,
                             load_events, split_dataset, straight_track, write_event_rows)
from intentplan.geometry import FrenetState
from intentplan.intent_space import Decision
from intentplan.planner import SelectionMode, rolling_plan
from intentplan.synthetic import SyntheticConfig, generate_synthetic, truth_planner

from oracles import resample


@pytest.fixture(scope="module")
def small(scenario):
    return generate_synthetic(SyntheticConfig(n_events=2, seed=3), scenario)


@pytest.fixture
def small_csv(small, tmp_path):
    path = tmp_path / "events.csv"
    write_event_rows(path, small.rows)
    return path


def rewrite(path, edit):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    edit(rows)
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def arc_log(frame_dt, n):
    t = np.arange(n) * frame_dt
    ang = 0.05 * t + 0.01 * t ** 2
    rate = 30 * (0.05 + 0.02 * t)
    return VehicleLog("v", "left", t, 30 * np.cos(ang), 30 * np.sin(ang), -rate * np.sin(ang),
                      rate * np.cos(ang), np.zeros(n), np.zeros(n), ang + np.pi / 2)


class TestLoad:
    def test_two_events(self, small_csv, scenario):
        res = load_events(small_csv, scenario)
        assert [e.event_id for e in res.events] == ["e0000", "e0001"]
        for ev in res.events:
            assert ev.left_log.role == "left" and ev.straight_log.role == "straight"
            assert ev.decision in (Decision.PROCEED, Decision.YIELD)
        assert res.warnings == []

    def test_inconsistent_velocity_warns(self, small_csv, scenario):
        def bump(rows):
            col = rows[0].index("vx")
            rows[30][col] = repr(float(rows[30][col]) * 1.8 + 3.0)
        rewrite(small_csv, bump)
        res = load_events(small_csv, scenario)
        assert any("row 31" in w and "10%" in w for w in res.warnings)

    def test_malformed_row_reports_line(self, small_csv, scenario):
        rewrite(small_csv, lambda rows: rows[5].__setitem__(rows[0].index("x"), "abc"))
        with pytest.raises(DataError, match="row 6"):
            load_events(small_csv, scenario)

    def test_bad_role(self, small_csv, scenario):
        rewrite(small_csv, lambda rows: rows[3].__setitem__(rows[0].index("role"), "bus"))
        with pytest.raises(DataError, match="role"):
            load_events(small_csv, scenario)

    def test_missing_vehicle(self, small, scenario):
        rows = [r for r in small.rows if not (r["event_id"] == "e0001" and r["role"] == "straight")]
        with pytest.raises(DataError, match="straight"):
            events_from_rows(rows, scenario)

    def test_non_monotone_frames(self, small, scenario):
        rows = [dict(r) for r in small.rows]
        rows[4]["frame"] = rows[3]["frame"]
        with pytest.raises(DataError, match="frames"):
            events_from_rows(rows, scenario)

    def test_missing_columns(self, tmp_path, scenario):
        (tmp_path / "x.csv").write_text("event_id,role\n")
        with pytest.raises(DataError, match="missing columns"):
            load_events(tmp_path / "x.csv", scenario)

    def test_round_trip(self, small, small_csv, scenario):
        direct = events_from_rows(small.rows, scenario).events
        loaded = load_events(small_csv, scenario).events
        for a, b in zip(direct, loaded):
            for f in ("t", "x", "y", "vx", "vy", "heading"):
                np.testing.assert_allclose(getattr(b.left_log, f), getattr(a.left_log, f),
                                           rtol=0, atol=1e-9)
                np.testing.assert_allclose(getattr(b.straight_log, f), getattr(a.straight_log, f),
                                           rtol=0, atol=1e-9)


def test_resampled_speed_matches_fine_interpolation():
    lg = arc_log(0.04, 200)
    out = lg.resample(0.1)
    tf, vx, vy = resample(lg.t, lg.vx, lg.vy)
    k = np.rint((out.t - tf[0]) / 1e-3).astype(int)
    np.testing.assert_allclose(np.hypot(out.vx, out.vy), np.hypot(vx[k], vy[k]), atol=1e-3)
    np.testing.assert_allclose(np.diff(out.t), 0.1, atol=1e-12)


def test_consistent_log_has_no_flags():
    assert check_consistency(arc_log(0.1, 80)) == []


def test_smoothing_preserves_cubic():
    t = np.arange(60) * 0.1
    x = 0.2 * t ** 3 - t ** 2 + 3 * t
    z = np.zeros_like(t)
    lg = VehicleLog("v", "left", t, x, 2 * x, z, z, z, z, z)
    sm = lg.smoothed(1.0)
    np.testing.assert_allclose(sm.x, x, atol=1e-9)
    np.testing.assert_allclose(sm.y, 2 * x, atol=1e-9)


class TestSplit:
    def test_eight_two(self):
        train, test = split_dataset(list(range(10)), 0.8, 0, key=lambda i: i)
        assert (len(train), len(test)) == (8, 2)

    def test_deterministic_and_partition(self):
        items = [f"ev{i}" for i in range(37)]
        a = split_dataset(items, 0.8, 11, key=str)
        assert a == split_dataset(items, 0.8, 11, key=str)
        assert sorted(a[0] + a[1]) == sorted(items) and not set(a[0]) & set(a[1])

    def test_segments_stay_with_event(self):
        segs = [(e, k) for e in range(12) for k in range(5)]
        train, test = split_dataset(segs, 0.8, 2, key=lambda s: s[0])
        assert not {e for e, _ in train} & {e for e, _ in test}
        assert len(train) + len(test) == 60

    def test_errors(self):
        with pytest.raises(ValueError):
            split_dataset([1, 2, 3], 1.0, key=lambda i: i)
        with pytest.raises(DataError):
            split_dataset([1], 0.8, key=lambda i: i)


class TestSynthetic:
    def test_bit_reproducible(self, scenario):
        cfg = SyntheticConfig(n_events=2, seed=9)
        a, b = generate_synthetic(cfg, scenario), generate_synthetic(cfg, scenario)
        assert a.rows == b.rows and a.manifest == b.manifest

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SyntheticConfig(n_events=0)
        with pytest.raises(ValueError):
            SyntheticConfig(noise_std=-0.1)

    def test_noise_free_argmax_limit(self, scenario):
        cfg = SyntheticConfig(n_events=1, seed=4, noise_std=0.0, temperature=0.0)
        ds = generate_synthetic(cfg, scenario)
        info = ds.manifest["events"]["e0000"]
        ev = ds.events(scenario)[0]
        init = FrenetState(cfg.s0, info["l0"], info["v_left"])
        ro = rolling_plan(truth_planner(scenario, cfg), init, info["decision"], 0.0,
                          straight_track(ev.straight_log, scenario), replan_dt=cfg.replan_dt,
                          seed=info["rollout_seed"], mode=SelectionMode.ARGMAX)
        np.testing.assert_array_equal(ro.executed.x, ev.left_log.x)
        np.testing.assert_array_equal(ro.executed.y, ev.left_log.y)

    def test_pre_turn_only_when_proceeding(self, corpus, corpus_events, scenario):
        shift = {Decision.PROCEED: [], Decision.YIELD: []}
        for ev in corpus_events:
            i = int(np.searchsorted(ev.left.s, scenario.stop_line_s))
            shift[ev.decision].append(abs(ev.left.l[i] - corpus.manifest["events"][ev.event_id]["l0"]))
        assert np.mean(shift[Decision.PROCEED]) > 0.5
        assert np.mean(shift[Decision.YIELD]) < 0.2
