import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intentplan.geometry import FrenetState, PathError, build_reference_path
from intentplan.trajectory import (BoundaryConditions, PolyPair, Track, TrajectoryError,
                                   discretize, evaluate_batch, plan_polynomials,
                                   poly_derivatives, read_trajectory_csv,
                                   solve_longitudinal_quartic, solve_quintic)

mpmath.mp.dps = 40


def vandermonde_oracle(rows):
    """Solve the boundary system in 40-digit arithmetic.

    ``rows`` is a list of (derivative order, time, value); the unknowns are
    the monomial coefficients, one per row.
    """
    n = len(rows)
    A = mpmath.matrix(n, n)
    b = mpmath.matrix(n, 1)
    for r, (order, t, val) in enumerate(rows):
        t = mpmath.mpf(t)
        for k in range(n):
            if k >= order:
                A[r, k] = mpmath.factorial(k) / mpmath.factorial(k - order) * t ** (k - order)
        b[r] = mpmath.mpf(val)
    return np.array([float(v) for v in mpmath.lu_solve(A, b)])


def quartic_rows(init, vT, aT, T):
    s0, v0, a0 = init
    return [(0, 0, s0), (1, 0, v0), (2, 0, a0), (1, T, vT), (2, T, aT)]


def quintic_rows(init, term, T):
    return [(k, 0, init[k]) for k in range(3)] + [(k, T, term[k]) for k in range(3)]


def evaluate(c, t):
    return [float(v[0, 0]) for v in poly_derivatives(np.asarray(c)[None], np.array([t]))]


class TestQuartic:
    def test_constant_speed_is_linear(self):
        c = solve_longitudinal_quartic((0, 5, 0), 5, 0, 5)
        np.testing.assert_allclose(c, [0, 5, 0, 0, 0], atol=1e-12)

    @pytest.mark.parametrize("init,vT,aT,T", [((0, 5, 0), 8, 0, 5), ((2, 4, 1), 6, 0, 3)])
    def test_against_vandermonde(self, init, vT, aT, T):
        c = solve_longitudinal_quartic(init, vT, aT, T)
        np.testing.assert_allclose(c, vandermonde_oracle(quartic_rows(init, vT, aT, T)),
                                   rtol=0, atol=1e-12)
        s, v, a, _ = evaluate(c, T)
        assert v == pytest.approx(vT, abs=1e-9)
        assert a == pytest.approx(aT, abs=1e-9)
        s, v, a, _ = evaluate(c, 0.0)
        assert (s, v, a) == pytest.approx(init, abs=1e-12)

    def test_batched_matches_scalar(self):
        vT = np.array([3.0, 5.0, 7.0])
        batch = solve_longitudinal_quartic((1, 5, 0.5), vT, 0, 4)
        for i, v in enumerate(vT):
            np.testing.assert_array_equal(batch[i], solve_longitudinal_quartic((1, 5, 0.5), v, 0, 4))

    @pytest.mark.parametrize("T", [0.0, -1.0])
    def test_bad_duration(self, T):
        with pytest.raises(TrajectoryError):
            solve_longitudinal_quartic((0, 5, 0), 5, 0, T)


class TestQuintic:
    def test_zero(self):
        np.testing.assert_array_equal(solve_quintic((0, 0, 0), (0, 0, 0), 5), np.zeros(6))

    def test_smoothstep_midpoint(self):
        c = solve_quintic((0, 0, 0), (1, 0, 0), 5)
        assert evaluate(c, 2.5)[0] == pytest.approx(0.5, abs=1e-12)
        # 10u^3 - 15u^4 + 6u^5 in u = t/5
        np.testing.assert_allclose(c, [0, 0, 0, 10 / 125, -15 / 625, 6 / 3125], atol=1e-15)

    def test_bad_duration(self):
        with pytest.raises(TrajectoryError):
            solve_quintic((0, 0, 0), (1, 0, 0), 0)

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=6, max_size=6), st.floats(0.5, 8.0))
    def test_vandermonde_residuals(self, vals, T):
        init, term = vals[:3], vals[3:]
        c = solve_quintic(init, term, T)
        oracle = vandermonde_oracle(quintic_rows(init, term, T))
        np.testing.assert_allclose(c, oracle, rtol=1e-9, atol=1e-9)
        end = evaluate(c, T)[:3]
        np.testing.assert_allclose(end, term, atol=1e-9)


@settings(max_examples=80, deadline=None)
@given(s0=st.floats(0, 50), l0=st.floats(-3, 3), vs=st.floats(0.1, 15), vl=st.floats(-2, 2),
       as_=st.floats(-3, 3), al=st.floats(-1, 1), lT=st.floats(-3, 3), vsT=st.floats(0, 15),
       vlT=st.floats(-2, 2), T=st.floats(1, 8), pin=st.booleans())
def test_boundary_reproduction(s0, l0, vs, vl, as_, al, lT, vsT, vlT, T, pin):
    init = FrenetState(s0, l0, vs, vl, as_, al)
    sT = s0 + 0.5 * (vs + vsT) * T if pin else None
    bc = BoundaryConditions(init, lT, vsT, vlT, T, s_T=sT)
    poly = plan_polynomials(bc)
    assert len(poly.lon) == (6 if pin else 5)
    a, b = poly.state(0.0), poly.state(T)
    for got, want in zip((a.s, a.l, a.v_s, a.v_l, a.a_s, a.a_l), (s0, l0, vs, vl, as_, al)):
        assert got == pytest.approx(want, abs=1e-9)
    for got, want in zip((b.l, b.v_s, b.v_l, b.a_s, b.a_l), (lT, vsT, vlT, 0.0, 0.0)):
        assert got == pytest.approx(want, abs=1e-9)
    if pin:
        assert b.s == pytest.approx(sT, abs=1e-9)


def test_boundary_conditions_reject_nonpositive_duration():
    with pytest.raises(TrajectoryError):
        BoundaryConditions(FrenetState(0, 0, 5), 0, 5, 0, 0.0)


class TestDiscretize:
    def cruise(self, path, v=5.0, T=5.0, l=0.0):
        return plan_polynomials(BoundaryConditions(FrenetState(1.0, l, v), l, v, 0.0, T))

    def test_point_count(self, straight_path):
        tr = discretize(self.cruise(straight_path), straight_path, 0.1)
        assert len(tr) == 51
        assert tr.t[0] == 0.0
        np.testing.assert_allclose(np.diff(tr.t), 0.1, atol=1e-12)

    def test_straight_constant_speed(self, straight_path):
        tr = discretize(self.cruise(straight_path, l=1.5), straight_path, 0.1)
        np.testing.assert_allclose(tr.curvature, 0.0, atol=1e-12)
        np.testing.assert_allclose(tr.jerk_s, 0.0, atol=1e-12)
        np.testing.assert_allclose(tr.jerk_l, 0.0, atol=1e-12)
        np.testing.assert_allclose(tr.y, 1.5, atol=1e-12)

    def test_speed_identity(self, straight_path):
        bc = BoundaryConditions(FrenetState(2, 0.3, 6, 0.4, 0.2, -0.1), 1.0, 4, -0.2, 5)
        tr = discretize(plan_polynomials(bc), straight_path, 0.1)
        np.testing.assert_allclose(tr.speed, np.hypot(tr.v_s, tr.v_l), atol=1e-12)

    def test_jerk_matches_finite_differences(self, straight_path):
        bc = BoundaryConditions(FrenetState(2, 0.0, 6, 0.5, 1.0, 0.2), 1.5, 3, -0.3, 5)
        poly = plan_polynomials(bc)
        tr = discretize(poly, straight_path, 0.1)
        h = 1e-4
        for i in range(1, len(tr) - 1):
            t = tr.t[i]
            ap = poly.state(t + h)
            am = poly.state(t - h)
            assert tr.jerk_s[i] == pytest.approx((ap.a_s - am.a_s) / (2 * h), abs=1e-3)
            assert tr.jerk_l[i] == pytest.approx((ap.a_l - am.a_l) / (2 * h), abs=1e-3)
        # on the sampled grid as well
        fd = (tr.a_s[2:] - tr.a_s[:-2]) / 0.2
        np.testing.assert_allclose(tr.jerk_s[1:-1], fd, atol=1e-3 + 0.02 * np.abs(fd).max())

    def test_refinement(self):
        path = build_reference_path(np.column_stack([
            20 * np.cos(np.linspace(-np.pi / 2, 0, 400)),
            20 + 20 * np.sin(np.linspace(-np.pi / 2, 0, 400))]), 0.1)
        bc = BoundaryConditions(FrenetState(1, 0.2, 5, 0.1, 0.5, 0), 1.0, 3.5, 0.0, 5)
        poly = plan_polynomials(bc)
        coarse, fine = discretize(poly, path, 0.1), discretize(poly, path, 0.05)

        def trap(tr, col):
            return np.trapezoid(col, tr.t) / tr.duration

        for col in ("speed", "jerk_s"):
            a = trap(coarse, np.abs(getattr(coarse, col)))
            b = trap(fine, np.abs(getattr(fine, col)))
            assert abs(a - b) <= 0.005 * abs(b)

    def test_leaves_domain(self, straight_path):
        poly = plan_polynomials(BoundaryConditions(FrenetState(90, 0, 10), 0, 10, 0, 5))
        with pytest.raises(PathError):
            discretize(poly, straight_path, 0.1)

    def test_bad_dt(self, straight_path):
        with pytest.raises(TrajectoryError):
            discretize(self.cruise(straight_path), straight_path, 0.0)

    def test_batch_matches_single(self, straight_path):
        lon = solve_longitudinal_quartic((1, 5, 0), np.array([3.0, 5.0, 7.0]), 0, 5)
        lat = solve_quintic((0, 0, 0), (np.array([0.0, 1.0, -1.0]), 0, 0), 5)
        batch = evaluate_batch(lon, lat, 5.0, straight_path, 0.1)
        for i in range(3):
            single = discretize(PolyPair(lon[i], lat[i], 5.0), straight_path, 0.1)
            got = batch.trajectory(i)
            for f in ("x", "y", "speed", "jerk_l"):
                np.testing.assert_allclose(getattr(got, f), getattr(single, f), atol=1e-12)

    def test_csv_round_trip(self, straight_path, tmp_path):
        tr = discretize(self.cruise(straight_path), straight_path, 0.1)
        tr.to_csv(tmp_path / "t.csv")
        cols = read_trajectory_csv(tmp_path / "t.csv")
        for c in ("t", "s", "x", "speed", "jerk_s"):
            np.testing.assert_array_equal(cols[c], getattr(tr, c))


def test_constant_velocity_track(straight_path):
    tr = Track.constant_velocity(straight_path, 10.0, 4.0, 0.0, 5.0, 0.1)
    assert len(tr) == 51
    np.testing.assert_allclose(tr.x, 10 + 4 * tr.t, atol=1e-12)
    np.testing.assert_allclose(tr.speed, 4.0)
    np.testing.assert_allclose(np.asarray(tr.s), tr.x, atol=1e-12)
    assert math.isclose(tr.dt, 0.1)
