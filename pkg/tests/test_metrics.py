from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import LineString, Polygon, box

from intentplan.constraints import VehicleFootprint
from intentplan.metrics import (MetricError, conflict_zone, covered_cells, metric_coverage,
                                metric_pet, metric_sl_offset, metric_travel_time,
                                occupancy_interval, pet_from_intervals, summary)

from oracles import binned_cells, occupancy_scan, travel_time_scan

SQUARE = [(0, -10), (20, -10), (20, 10), (0, 10)]
FP = VehicleFootprint()


def drive(v, x0=-5.0, x1=25.0, dt=0.1, y=0.0, heading=0.0):
    n = int(round((x1 - x0) / (v * dt))) + 1
    t = np.arange(n) * dt
    c, s = np.cos(heading), np.sin(heading)
    d = v * t + x0
    return SimpleNamespace(t=t, x=c * d, y=s * d + y, heading=np.full(n, heading))


class TestCoverage:
    def test_identity(self, rng):
        trajs = [np.cumsum(rng.normal(size=(40, 2)), axis=0) for _ in range(5)]
        cov = metric_coverage(trajs, trajs)
        assert cov.ratio == 1.0 and cov.planned_cells == cov.real_cells

    def test_ten_metre_line(self):
        line = [np.column_stack([np.linspace(0.1, 10.1, 11), np.full(11, 0.25)])]
        region = (-2.0, -2.0, 12.0, 2.0)
        got = covered_cells(line, 0.5, region)
        assert abs(len(got) - 21) <= 1
        assert abs(len(got) - len(binned_cells(line, 0.5, region))) <= 1

    def test_diagonal_matches_binning(self):
        xy = [np.array([[0.0, 0.0], [7.3, 5.1], [9.0, -2.2]])]
        region = (-2.0, -4.2, 11.0, 7.1)
        got = covered_cells(xy, 0.5, region)
        assert abs(len(got) - len(binned_cells(xy, 0.5, region))) <= 1

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(2, 12))
    def test_traversal_matches_exact_intersection(self, seed, n):
        r = np.random.default_rng(seed)
        xy = np.cumsum(r.normal(0, 1.5, size=(n, 2)), axis=0)
        # an off-grid pad keeps vertices off cell boundaries
        region = (xy[:, 0].min() - 1.13, xy[:, 1].min() - 1.07, xy[:, 0].max() + 1, xy[:, 1].max() + 1)
        line = LineString(xy)
        x0, y0 = region[:2]
        exact = {(i, j) for i in range(int((region[2] - x0) / 0.5) + 1)
                 for j in range(int((region[3] - y0) / 0.5) + 1)
                 if line.intersection(box(x0 + 0.5 * i, y0 + 0.5 * j,
                                          x0 + 0.5 * (i + 1), y0 + 0.5 * (j + 1))).length > 0}
        assert covered_cells([xy], 0.5, region) == exact

    def test_two_point_line_is_traced(self):
        xy = [np.array([[0.1, 0.25], [10.1, 0.25]])]
        assert len(covered_cells(xy, 0.5, (-2, -2, 12, 2), trace=False)) == 2
        assert metric_coverage(xy, xy).real_cells == 21

    def test_errors(self):
        with pytest.raises(MetricError):
            metric_coverage([], [np.zeros((2, 2))])
        with pytest.raises(MetricError):
            metric_coverage([np.zeros((2, 2))], [np.zeros((2, 2))], cell=0)


class TestSlOffset:
    def test_zero(self):
        assert metric_sl_offset(np.linspace(0, 50, 20), np.zeros(20), 50.0) == 0.0

    def test_unit_rectangle(self):
        assert metric_sl_offset(np.linspace(0, 50, 20), np.ones(20), 50.0) == pytest.approx(1.0, abs=1e-12)

    def test_triangle(self):
        s = np.linspace(0, 10, 101)
        assert metric_sl_offset(s, s / 10, 10.0) == pytest.approx(0.5, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), k=st.integers(2, 6))
    def test_time_reparameterization(self, seed, k):
        # a slower traversal samples the same piecewise-linear (s, l) path more densely
        r = np.random.default_rng(seed)
        s = np.cumsum(r.uniform(0.1, 2.0, 30))
        l = r.uniform(0.05, 2.0, 30) * r.choice([-1, 1])
        fine_s = np.concatenate([np.linspace(a, b, k, endpoint=False)
                                 for a, b in zip(s[:-1], s[1:])] + [s[-1:]])
        fine_l = np.interp(fine_s, s, l)
        assert metric_sl_offset(fine_s, fine_l, 60.0) == pytest.approx(
            metric_sl_offset(s, l, 60.0), rel=1e-12)


class TestTravelTime:
    def test_square_crossing(self):
        d = drive(5.0)
        assert metric_travel_time(d.t, d.x, d.y, SQUARE) == pytest.approx(4.0, abs=0.1)

    def test_matches_scan_oracle(self, rng):
        for _ in range(20):
            v = rng.uniform(2, 12)
            h = rng.uniform(-0.6, 0.6)
            d = drive(v, -8.0, 30.0, heading=h, y=rng.uniform(-3, 3))
            got = metric_travel_time(d.t, d.x, d.y, SQUARE)
            assert got == pytest.approx(travel_time_scan(d.t, d.x, d.y, SQUARE), abs=0.01)

    def test_monotone_in_speed(self):
        times = [metric_travel_time(*(lambda d: (d.t, d.x, d.y))(drive(v)), SQUARE)
                 for v in (2.0, 4.0, 5.0, 8.0, 12.0)]
        assert np.all(np.diff(times) < 0)

    def test_errors(self):
        d = drive(5.0, -5.0, 10.0)
        with pytest.raises(MetricError, match="leaves"):
            metric_travel_time(d.t, d.x, d.y, SQUARE)
        d = drive(5.0, -20.0, -5.0)
        with pytest.raises(MetricError, match="enters"):
            metric_travel_time(d.t, d.x, d.y, SQUARE)


class TestPet:
    def test_arithmetic(self):
        assert pet_from_intervals((7.3, 9.0), (3.0, 3.8)) == pytest.approx(3.5)

    @settings(max_examples=60, deadline=None)
    @given(a0=st.floats(0, 20), da=st.floats(0, 3), b0=st.floats(0, 20), db=st.floats(0, 3))
    def test_symmetric(self, a0, da, b0, db):
        a, b = (a0, a0 + da), (b0, b0 + db)
        assert pet_from_intervals(a, b) == pet_from_intervals(b, a)

    def test_occupancy_matches_scan(self, rng):
        zone = box(8.0, -1.5, 11.0, 1.5)
        for _ in range(10):
            d = drive(rng.uniform(2, 10), -10.0, 30.0, heading=rng.uniform(-0.2, 0.2))
            got = occupancy_interval(d.t, d.x, d.y, d.heading, zone, FP)
            want = occupancy_scan(d.t, d.x, d.y, d.heading, zone, FP.length, FP.width)
            np.testing.assert_allclose(got, want, atol=0.1)
            np.testing.assert_allclose(got, want, atol=2e-3)

    def test_crossing_pair(self):
        left = drive(5.0, -20.0, 20.0)
        straight = SimpleNamespace(t=left.t, x=np.zeros_like(left.t), y=60.0 - 8.0 * left.t,
                                   heading=np.full(len(left.t), -np.pi / 2))
        zone = conflict_zone(np.array([[-30.0, 0], [30, 0]]), np.array([[0.0, 70], [0, -70]]),
                             FP.width, FP.width)
        pet = metric_pet(left, straight, zone, FP, FP)
        ia = occupancy_scan(left.t, left.x, left.y, left.heading, zone, FP.length, FP.width)
        ib = occupancy_scan(straight.t, straight.x, straight.y, straight.heading, zone,
                            FP.length, FP.width)
        assert pet == pytest.approx(pet_from_intervals(ia, ib), abs=0.01)
        assert pet == pytest.approx(metric_pet(straight, left, zone, FP, FP), abs=1e-12)

    def test_never_occupies(self):
        d = drive(5.0, -5.0, 5.0, y=30.0)
        with pytest.raises(MetricError):
            occupancy_interval(d.t, d.x, d.y, d.heading, box(0, 0, 1, 1), FP)

    def test_zone_needs_overlap(self):
        with pytest.raises(MetricError):
            conflict_zone(np.array([[0.0, 0], [10, 0]]), np.array([[0.0, 20], [10, 20]]), 2, 2)


def test_conflict_zone_is_corridor_overlap():
    zone = conflict_zone(np.array([[-30.0, 0], [30, 0]]), np.array([[0.0, 70], [0, -70]]), 2.0, 3.0)
    assert isinstance(zone, Polygon)
    assert zone.area == pytest.approx(6.0)


def test_summary():
    assert summary([1.0, 3.0, None, float("nan")]) == {"n": 2, "mean": 2.0, "std": 1.0}
    assert summary([]) == {"n": 0, "mean": None, "std": None}
