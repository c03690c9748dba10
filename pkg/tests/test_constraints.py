import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intentplan.constraints import (CheckResult, KinematicBounds, VehicleFootprint, box_corners,
                                    boxes_overlap, collision_free, filter_candidates,
                                    kinematic_feasible, safety_box)
from intentplan.geometry import FrenetState
from intentplan.intent_space import intersection_terminal_arrays
from intentplan.trajectory import (BoundaryConditions, Track, discretize, evaluate_batch,
                                   plan_polynomials, solve_quintic)

from oracles import clear_case, in_rect, raster_overlap

FP = VehicleFootprint()


def cruise(path, s0=1.0, v=5.0, l=0.0, T=5.0):
    return discretize(plan_polynomials(BoundaryConditions(FrenetState(s0, l, v), l, v, 0.0, T)), path, 0.1)


def parked(x, y, heading=0.0, t0=0.0, T=5.0, dt=0.1):
    t = t0 + np.arange(int(round(T / dt)) + 1) * dt
    n = len(t)
    return Track(t, np.full(n, x), np.full(n, y), np.full(n, heading), np.zeros(n))


class TestKinematic:
    def test_constant_speed_passes(self, straight_path):
        b = KinematicBounds(0, 20, -5, 5, -0.3, 0.3)
        assert kinematic_feasible(cruise(straight_path), b) == CheckResult(True)

    def test_overspeed_index(self, straight_path):
        tr = cruise(straight_path)
        tr.speed = tr.speed.copy()
        tr.speed[17] = 25.0
        res = kinematic_feasible(tr, KinematicBounds(0, 20, -5, 5, -0.3, 0.3))
        assert not res.ok and res.index == 17
        assert res.time == pytest.approx(1.7)

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            KinematicBounds(v_min=5, v_max=5)

    def test_corpus_bounds_admit_corpus(self, corpus_events):
        logs = [ev.left for ev in corpus_events]
        b = KinematicBounds.from_corpus(logs, headroom=0.1)
        admitted = [kinematic_feasible(tr, b).ok for tr in logs]
        assert np.mean(admitted) >= 0.99


class TestSafetyBox:
    def test_default_box(self):
        assert (FP.box_length, FP.box_width) == pytest.approx((5.5, 2.4))

    def test_axis_aligned_corners(self):
        c = safety_box((0.0, 0.0, 0.0), FP)
        assert sorted(map(tuple, np.round(c, 12))) == sorted(
            [(2.75, 1.2), (-2.75, 1.2), (-2.75, -1.2), (2.75, -1.2)])

    def test_rotation_swaps_extent(self):
        c = safety_box((0.0, 0.0, np.pi / 2), FP)
        assert np.abs(c[:, 0]).max() == pytest.approx(1.2)
        assert np.abs(c[:, 1]).max() == pytest.approx(2.75)

    def test_non_finite_heading(self):
        with pytest.raises(ValueError):
            safety_box((0.0, 0.0, np.nan), FP)

    def test_footprint_validation(self):
        with pytest.raises(ValueError):
            VehicleFootprint(length=0)


def test_sat_matches_raster_oracle():
    r = np.random.default_rng(4)
    checked = 0
    while checked < 100:
        a = (0.0, 0.0, r.uniform(-np.pi, np.pi), 5.5, 2.4)
        d = r.uniform(1.0, 6.5)
        ang = r.uniform(-np.pi, np.pi)
        b = (d * np.cos(ang), d * np.sin(ang), r.uniform(-np.pi, np.pi), 5.5, 2.4)
        if not clear_case(a, b):
            continue
        sat = bool(boxes_overlap(box_corners(*a[:3], 5.5, 2.4), box_corners(*b[:3], 5.5, 2.4)))
        assert sat == raster_overlap(a, b), (a, b)
        checked += 1


class TestCollisionFree:
    def test_parallel_lanes(self, straight_path):
        left = cruise(straight_path)
        other = Track.constant_velocity(straight_path, 1.0, 5.0, 0.0, 5.0, 0.1)
        other.y = other.y + 10.0
        assert collision_free(left, other, FP).ok

    def test_stationary_same_point(self, straight_path):
        tr = cruise(straight_path, v=0.0)
        res = collision_free(tr, parked(tr.x[0], tr.y[0]), FP)
        assert not res.ok and res.index == 0 and res.time == 0.0

    def test_mismatched_dt(self, straight_path):
        a = cruise(straight_path)
        b = discretize(plan_polynomials(BoundaryConditions(FrenetState(1, 3, 5), 3, 5, 0, 5)),
                       straight_path, 0.2)
        with pytest.raises(ValueError, match="mismatched dt"):
            collision_free(a, b, FP)


def _batch(scenario, state, decision="proceed", corridor=None):
    from intentplan.intent_space import CorridorModel, SamplerConfig
    corridor = corridor or CorridorModel.flat(2.0, (0.0, scenario.left_path.total_length))
    term = intersection_terminal_arrays(state, decision, corridor, SamplerConfig())
    lat = solve_quintic((state.l, state.v_l, state.a_l), (term["l_T"], term["v_lT"], 0.0), term["T"])
    return evaluate_batch(term["lon"], lat, term["T"], scenario.left_path, 0.1, decision)


class TestFilter:
    def test_no_straight_vehicle(self, scenario):
        batch = _batch(scenario, FrenetState(55.0, 0.0, 6.0))
        res = filter_candidates(batch, None, KinematicBounds(), FP)
        assert res.counts["collision"] == 0
        assert res.counts["total"] == 300
        assert sum(res.counts[k] for k in ("domain", "kinematic", "collision", "survivors")) == 300

    def test_parked_on_conflict_point(self, scenario):
        cx, cy = scenario.conflict.point
        h = float(np.interp(scenario.conflict.s_cp_straight, scenario.straight_path.s,
                            scenario.straight_path.heading))
        track = parked(cx, cy, h)
        state = FrenetState(scenario.conflict.s_cp_left - 20.0, 0.0, 6.0)
        batch = _batch(scenario, state)
        bounds = KinematicBounds(0, 30, -20, 20, -2, 2)
        res = filter_candidates(batch, track, bounds, FP)
        assert res.counts["collision"] > 0
        kept = set(res.indices.tolist())
        for i in range(len(batch)):
            n = int(batch.valid[i].sum())
            hit = any(raster_overlap((batch["x"][i, k], batch["y"][i, k], batch["heading"][i, k], 5.5, 2.4),
                                     (cx, cy, h, 5.5, 2.4), cell=0.02)
                      for k in range(n)
                      if np.hypot(batch["x"][i, k] - cx, batch["y"][i, k] - cy) < 6.1)
            if batch["in_domain"][i]:
                assert (i in kept) == (not hit)

    def test_idempotent_and_ordered(self, scenario):
        batch = _batch(scenario, FrenetState(50.0, 0.2, 7.0, 0.3))
        track = Track.constant_velocity(scenario.straight_path, 180.0, 8.0, 0.0, 5.0, 0.1)
        b = KinematicBounds(0, 10, -3, 2, -0.3, 0.3)
        once = filter_candidates(batch, track, b, FP)
        twice = filter_candidates(once.batch, track, b, FP)
        assert np.all(np.diff(once.indices) > 0)
        assert twice.counts["survivors"] == once.counts["survivors"]
        np.testing.assert_array_equal(twice.batch["x"], once.batch["x"])

    def test_margin_monotonicity(self, scenario):
        batch = _batch(scenario, FrenetState(50.0, 0.0, 7.0))
        track = Track.constant_velocity(scenario.straight_path, 175.0, 9.0, 0.0, 5.0, 0.1)
        with_m = filter_candidates(batch, track, KinematicBounds(), FP)
        without = filter_candidates(batch, track, KinematicBounds(), FP.without_margins())
        assert set(with_m.indices) <= set(without.indices)

    def test_survivors_recheck(self, scenario):
        batch = _batch(scenario, FrenetState(50.0, 0.3, 8.0, 0.5, 1.0))
        b = KinematicBounds(0, 12, -3, 2.5, -0.2, 0.2)
        res = filter_candidates(batch, None, b, FP)
        for i in range(len(res.batch)):
            assert kinematic_feasible(res.batch.trajectory(i), b).ok


@settings(max_examples=40, deadline=None)
@given(lm=st.floats(0, 1), wm=st.floats(0, 1), dx=st.floats(-8, 8), dy=st.floats(-5, 5),
       h=st.floats(-np.pi, np.pi))
def test_margin_growth_only_adds_overlaps(lm, wm, dx, dy, h):
    small = VehicleFootprint(4.5, 1.8, 0.0, 0.0)
    big = dataclasses.replace(small, margin_longitudinal=lm, margin_lateral=wm)
    a0 = box_corners(0, 0, 0, small.box_length, small.box_width)
    b0 = box_corners(dx, dy, h, small.box_length, small.box_width)
    a1 = box_corners(0, 0, 0, big.box_length, big.box_width)
    b1 = box_corners(dx, dy, h, big.box_length, big.box_width)
    if boxes_overlap(a0, b0):
        assert boxes_overlap(a1, b1)


def test_in_rect_oracle_self_check():
    # the oracle itself: centre in, far corner out
    assert in_rect(0.0, 0.0, 0, 0, 0.3, 5.5, 2.4)
    assert not in_rect(3.0, 1.3, 0, 0, 0.0, 5.5, 2.4)
