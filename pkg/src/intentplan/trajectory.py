"""Polynomial trajectory synthesis in the Frenet frame.

Longitudinal motion uses a quartic (free terminal position) or a quintic
(pinned terminal position); lateral motion is always quintic.
Coefficients are stored in ascending order: ``c[0] + c[1] t + ...``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import FrenetState, PathError, ReferencePath, frenet_to_cartesian_arrays

CSV_COLUMNS = ("t", "s", "l", "x", "y", "heading", "speed", "accel",
               "jerk_s", "jerk_l", "curvature")


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryConditions:
    """Initial Frenet state plus terminal targets over duration ``T``.

    ``s_T`` is only set when the terminal position is pinned (upstream
    planning to the stop line); otherwise it follows from the quartic.
    """

    initial: FrenetState
    l_T: float
    v_sT: float
    v_lT: float
    T: float
    s_T: Optional[float] = None
    a_sT: float = 0.0
    a_lT: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise TrajectoryError(f"T must be positive, got {self.T}")


def _check_T(T):
    if np.any(np.asarray(T) <= 0):
        raise TrajectoryError("T must be positive")


def _tail_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    # LAPACK gesv: LU with partial pivoting, batched over leading axes
    return np.linalg.solve(A, b[..., None])[..., 0]


def solve_longitudinal_quartic(init: Sequence[float], v_T, a_T, T) -> np.ndarray:
    """Quartic matching position/speed/accel at 0 and speed/accel at ``T``.

    ``init`` is ``(s0, v0, a0)``. Terminal values and ``T`` may be arrays
    (broadcast together), giving coefficients of shape ``(..., 5)``.
    """
    _check_T(T)
    s0, v0, a0 = (np.asarray(v, dtype=float) for v in init)
    v_T, a_T, T = np.broadcast_arrays(np.asarray(v_T, float), np.asarray(a_T, float),
                                      np.asarray(T, float))
    s0, v0, a0 = (np.broadcast_to(v, T.shape) for v in (s0, v0, a0))
    A = np.zeros(T.shape + (2, 2))
    A[..., 0, 0] = 3 * T ** 2
    A[..., 0, 1] = 4 * T ** 3
    A[..., 1, 0] = 6 * T
    A[..., 1, 1] = 12 * T ** 2
    b = np.stack([v_T - v0 - a0 * T, a_T - a0], axis=-1)
    c34 = _tail_solve(A, b)
    return np.concatenate([np.stack([s0, v0, 0.5 * a0], axis=-1), c34], axis=-1)


def solve_quintic(init: Sequence[float], terminal: Sequence[float], T) -> np.ndarray:
    """Quintic matching position/speed/accel at both ends.

    ``init`` and ``terminal`` are ``(p, v, a)`` triples; entries may be
    arrays, giving coefficients of shape ``(..., 6)``.
    """
    _check_T(T)
    p0, v0, a0 = (np.asarray(v, dtype=float) for v in init)
    pT, vT, aT = (np.asarray(v, dtype=float) for v in terminal)
    arrays = np.broadcast_arrays(p0, v0, a0, pT, vT, aT, np.asarray(T, float))
    p0, v0, a0, pT, vT, aT, T = arrays
    A = np.zeros(T.shape + (3, 3))
    A[..., 0, :] = np.stack([T ** 3, T ** 4, T ** 5], axis=-1)
    A[..., 1, :] = np.stack([3 * T ** 2, 4 * T ** 3, 5 * T ** 4], axis=-1)
    A[..., 2, :] = np.stack([6 * T, 12 * T ** 2, 20 * T ** 3], axis=-1)
    b = np.stack([
        pT - p0 - v0 * T - 0.5 * a0 * T ** 2,
        vT - v0 - a0 * T,
        aT - a0,
    ], axis=-1)
    tail = _tail_solve(A, b)
    return np.concatenate([np.stack([p0, v0, 0.5 * a0], axis=-1), tail], axis=-1)


def poly_derivatives(coeffs: np.ndarray, t: np.ndarray, order: int = 3) -> list[np.ndarray]:
    """Evaluate a batch of polynomials and derivatives up to ``order``.

    ``coeffs`` has shape ``(M, K)``, ``t`` shape ``(N,)`` or ``(M, N)``.
    Returns a list of ``order + 1`` arrays of shape ``(M, N)``.
    """
    coeffs = np.atleast_2d(coeffs)
    t = np.asarray(t, dtype=float)
    if t.ndim == 1:
        t = np.broadcast_to(t, (coeffs.shape[0], t.shape[0]))
    out = []
    c = coeffs
    for _ in range(order + 1):
        # Horner, highest power first
        acc = np.zeros(t.shape)
        for k in range(c.shape[1] - 1, -1, -1):
            acc = acc * t + c[:, k:k + 1]
        out.append(acc)
        c = c[:, 1:] * np.arange(1, c.shape[1])[None, :] if c.shape[1] > 1 else np.zeros_like(c[:, :1])
    return out


@dataclass(frozen=True)
class PolyPair:
    lon: np.ndarray
    lat: np.ndarray
    T: float

    def state(self, t: float) -> FrenetState:
        s, ds, dds, _ = (v[0, 0] for v in poly_derivatives(self.lon[None], np.array([t])))
        l, dl, ddl, _ = (v[0, 0] for v in poly_derivatives(self.lat[None], np.array([t])))
        return FrenetState(float(s), float(l), float(ds), float(dl), float(dds), float(ddl))


def plan_polynomials(bc: BoundaryConditions) -> PolyPair:
    i = bc.initial
    if bc.s_T is None:
        lon = solve_longitudinal_quartic((i.s, i.v_s, i.a_s), bc.v_sT, bc.a_sT, bc.T)
    else:
        lon = solve_quintic((i.s, i.v_s, i.a_s), (bc.s_T, bc.v_sT, bc.a_sT), bc.T)
    lat = solve_quintic((i.l, i.v_l, i.a_l), (bc.l_T, bc.v_lT, bc.a_lT), bc.T)
    return PolyPair(np.asarray(lon), np.asarray(lat), bc.T)


def n_points(T, dt: float):
    return np.floor(np.asarray(T) / dt + 1e-9).astype(int) + 1


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    state: FrenetState
    x: float
    y: float
    heading: float
    speed: float
    accel: float
    jerk_s: float
    jerk_l: float
    curvature: float


@dataclass
class Trajectory:
    """Time-discretized trajectory stored column-wise.

    All arrays share one length; ``t`` starts at 0 with uniform ``dt``
    (``t0`` records the absolute start time when the trajectory is part of
    a longer rollout).
    """

    t: np.ndarray
    s: np.ndarray
    l: np.ndarray
    v_s: np.ndarray
    v_l: np.ndarray
    a_s: np.ndarray
    a_l: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    jerk_s: np.ndarray
    jerk_l: np.ndarray
    curvature: np.ndarray
    dt: float
    decision: Optional[str] = None
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    ARRAY_FIELDS = ("t", "s", "l", "v_s", "v_l", "a_s", "a_l", "x", "y", "heading",
                    "speed", "accel", "jerk_s", "jerk_l", "curvature")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def points(self) -> list[TrajectoryPoint]:
        return [self.point(i) for i in range(len(self))]

    def point(self, i: int) -> TrajectoryPoint:
        return TrajectoryPoint(
            float(self.t[i]),
            self.frenet(i),
            float(self.x[i]), float(self.y[i]), float(self.heading[i]),
            float(self.speed[i]), float(self.accel[i]),
            float(self.jerk_s[i]), float(self.jerk_l[i]), float(self.curvature[i]),
        )

    def frenet(self, i: int) -> FrenetState:
        return FrenetState(float(self.s[i]), float(self.l[i]), float(self.v_s[i]),
                           float(self.v_l[i]), float(self.a_s[i]), float(self.a_l[i]))

    def slice(self, start: int, stop: int) -> "Trajectory":
        kw = {f: getattr(self, f)[start:stop].copy() for f in self.ARRAY_FIELDS}
        return Trajectory(**kw, dt=self.dt, decision=self.decision, t0=self.t0,
                          meta=dict(self.meta))

    def with_time_offset(self, t0: float) -> "Trajectory":
        kw = {f: getattr(self, f).copy() for f in self.ARRAY_FIELDS}
        kw["t"] = kw["t"] - kw["t"][0]
        return Trajectory(**kw, dt=self.dt, decision=self.decision, t0=t0, meta=dict(self.meta))

    @property
    def abs_t(self) -> np.ndarray:
        return self.t0 + self.t

    @classmethod
    def concatenate(cls, parts: Sequence["Trajectory"]) -> "Trajectory":
        """Join pieces; each piece's first point must duplicate the previous last."""
        first = parts[0]
        kw = {}
        for f in cls.ARRAY_FIELDS:
            chunks = [getattr(first, f)]
            for p in parts[1:]:
                chunks.append(getattr(p, f)[1:])
            kw[f] = np.concatenate(chunks)
        kw["t"] = np.arange(len(kw["t"])) * first.dt
        return cls(**kw, dt=first.dt, decision=first.decision, t0=first.t0)

    def to_rows(self) -> list[list[float]]:
        cols = [self.abs_t] + [getattr(self, c) for c in CSV_COLUMNS[1:]]
        return [list(map(float, row)) for row in zip(*cols)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.to_rows():
                writer.writerow([repr(v) for v in row])


def _forward_fill_heading(heading: np.ndarray, moving: np.ndarray) -> np.ndarray:
    idx = np.where(moving, np.arange(heading.shape[1])[None, :], 0)
    np.maximum.accumulate(idx, axis=1, out=idx)
    return np.take_along_axis(heading, idx, axis=1)


@dataclass
class CandidateBatch:
    """A set of candidate trajectories evaluated on a common time grid.

    Arrays have shape ``(M, N)``; candidates shorter than ``N`` points are
    padded and excluded through ``valid``.
    """

    lon: np.ndarray
    lat: np.ndarray
    T: np.ndarray
    dt: float
    t: np.ndarray
    valid: np.ndarray
    cols: dict
    decision: Optional[str] = None
    terminals: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.lon.shape[0]

    def __getitem__(self, key) -> np.ndarray:
        return self.cols[key]

    @property
    def n_points(self) -> np.ndarray:
        return self.valid.sum(axis=1)

    def subset(self, idx) -> "CandidateBatch":
        idx = np.asarray(idx)
        return CandidateBatch(
            lon=self.lon[idx], lat=self.lat[idx], T=self.T[idx], dt=self.dt, t=self.t,
            valid=self.valid[idx], cols={k: v[idx] for k, v in self.cols.items()},
            decision=self.decision,
            terminals={k: np.asarray(v)[idx] for k, v in self.terminals.items()},
        )

    def trajectory(self, i: int, t0: float = 0.0) -> Trajectory:
        n = int(self.valid[i].sum())
        kw = {f: np.array(self.cols[f][i, :n]) for f in Trajectory.ARRAY_FIELDS if f != "t"}
        return Trajectory(t=np.array(self.t[:n]), **kw, dt=self.dt, decision=self.decision,
                          t0=t0, meta={"T": float(self.T[i])})

    def endpoints(self) -> np.ndarray:
        last = self.n_points - 1
        rows = np.arange(len(self))
        return np.column_stack([self.cols["x"][rows, last], self.cols["y"][rows, last]])


def evaluate_batch(lon: np.ndarray, lat: np.ndarray, T, path: ReferencePath, dt: float,
                   decision: Optional[str] = None) -> CandidateBatch:
    """Discretize ``M`` polynomial pairs and convert them to Cartesian states.

    Candidates whose ``s(t)`` leaves ``[0, path length]`` are marked through
    ``cols['in_domain']`` rather than raising.
    """
    lon = np.atleast_2d(lon)
    lat = np.atleast_2d(lat)
    M = lon.shape[0]
    T = np.broadcast_to(np.asarray(T, dtype=float), (M,)).copy()
    counts = n_points(T, dt)
    N = int(counts.max())
    t = np.arange(N) * dt
    valid = np.arange(N)[None, :] < counts[:, None]
    s, ds, dds, jerk_s = poly_derivatives(lon, t)
    l, dl, ddl, jerk_l = poly_derivatives(lat, t)
    L = path.total_length
    in_domain = np.all(~valid | ((s >= -1e-9) & (s <= L + 1e-9)), axis=1)
    sc = np.clip(s, 0.0, L)
    cart = frenet_to_cartesian_arrays(path, sc, l, ds, dl, dds, ddl)
    moving = cart["speed"] > 1e-6
    heading = _forward_fill_heading(cart["heading"], moving)
    cols = {
        "s": s, "l": l, "v_s": ds, "v_l": dl, "a_s": dds, "a_l": ddl,
        "jerk_s": jerk_s, "jerk_l": jerk_l,
        "x": cart["x"], "y": cart["y"], "heading": heading, "speed": cart["speed"],
        "accel": cart["accel"], "curvature": cart["curvature"],
        "in_domain": in_domain,
    }
    return CandidateBatch(lon=lon, lat=lat, T=T, dt=dt, t=t, valid=valid, cols=cols,
                          decision=decision)


def discretize(poly: PolyPair, path: ReferencePath, dt: float,
               decision: Optional[str] = None) -> Trajectory:
    """Sample a polynomial pair every ``dt`` seconds.

    Raises:
        PathError: if ``s(t)`` leaves the path domain.
    """
    if dt <= 0:
        raise TrajectoryError("dt must be positive")
    batch = evaluate_batch(poly.lon[None], poly.lat[None], poly.T, path, dt, decision)
    if not batch["in_domain"][0]:
        raise PathError("trajectory leaves the reference path domain")
    return batch.trajectory(0)


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Read a trajectory CSV back into column arrays."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {c: data[:, i] for i, c in enumerate(CSV_COLUMNS)}


@dataclass
class Track:
    """Cartesian state log of another road user on an absolute time grid.

    ``s`` is the arc length along the agent's own reference path when known.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    s: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        n = len(self.t)
        for name in ("x", "y", "heading", "speed"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
            if len(getattr(self, name)) != n:
                raise TrajectoryError(f"track column {name} has wrong length")
        if self.s is not None:
            self.s = np.asarray(self.s, dtype=float)
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise TrajectoryError("track times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t))) if len(self.t) > 1 else 0.0

    def sample(self, times) -> dict:
        """Linear interpolation at ``times``; ``inside`` flags the logged span."""
        times = np.asarray(times, dtype=float)
        tol = 1e-9
        inside = (times >= self.t[0] - tol) & (times <= self.t[-1] + tol)
        hd = np.unwrap(self.heading)
        out = {
            "x": np.interp(times, self.t, self.x),
            "y": np.interp(times, self.t, self.y),
            "heading": np.interp(times, self.t, hd),
            "speed": np.interp(times, self.t, self.speed),
            "inside": inside,
        }
        if self.s is not None:
            out["s"] = np.interp(times, self.t, self.s)
        return out

    def window(self, t_start: float, t_end: float) -> "Track":
        m = (self.t >= t_start - 1e-9) & (self.t <= t_end + 1e-9)
        return Track(self.t[m], self.x[m], self.y[m], self.heading[m], self.speed[m],
                     None if self.s is None else self.s[m])

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "Track":
        return cls(traj.abs_t, traj.x, traj.y, traj.heading, traj.speed, traj.s)

    @classmethod
    def constant_velocity(cls, path: ReferencePath, s0: float, v: float, t0: float,
                          T: float, dt: float) -> "Track":
        """Prediction that keeps speed ``v`` along ``path`` (clamped at its end)."""
        t = t0 + np.arange(int(n_points(T, dt))) * dt
        s = np.clip(s0 + v * (t - t0), 0.0, path.total_length)
        x, y, heading, _, _ = path.sample(s)
        moving = (s0 + v * (t - t0)) <= path.total_length
        return cls(t, x, y, heading, np.where(moving, v, 0.0), s)
