"""Reference paths, Frenet <-> Cartesian conversion and conflict points.

Paths are arc-length resampled polylines. Position between samples is
linearly interpolated; heading comes from central differences of the
resampled points and curvature from differences of the heading.

Sign convention: ``l`` is positive to the LEFT of the path direction.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

# Below this speed the velocity direction is meaningless; heading falls back
# to the path tangent.
HEADING_SPEED_EPS = 1e-6


class PathError(ValueError):
    """Invalid path construction or query outside the path domain."""


class ProjectionError(ValueError):
    """A point could not be projected onto a path."""


class AmbiguousProjectionError(ProjectionError):
    """Two distinct foot points are equally close to the query point."""

    def __init__(self, message: str, candidates: tuple[float, float]):
        super().__init__(message)
        self.candidates = candidates


class ConflictError(ValueError):
    """Two paths do not cross exactly once."""

    def __init__(self, count: int):
        super().__init__(f"expected exactly 1 intersection, found {count} intersections")
        self.count = count


@dataclass(frozen=True)
class FrenetState:
    s: float
    l: float
    v_s: float = 0.0
    v_l: float = 0.0
    a_s: float = 0.0
    a_l: float = 0.0

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.s, self.l, self.v_s, self.v_l, self.a_s, self.a_l)


@dataclass(frozen=True)
class CartesianState:
    x: float
    y: float
    heading: float
    v: float
    a: float
    curvature: float


@dataclass(frozen=True, eq=False)
class ReferencePath:
    """Arc-length parameterized path.

    Arrays are read-only; instances are safe to share.
    """

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    curvature: np.ndarray
    dcurvature: np.ndarray
    name: str = ""

    def __post_init__(self):
        for arr in (self.s, self.x, self.y, self.heading, self.curvature, self.dcurvature):
            arr.setflags(write=False)

    @property
    def total_length(self) -> float:
        return float(self.s[-1])

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @cached_property
    def kdtree(self) -> cKDTree:
        return cKDTree(self.xy)

    def __len__(self) -> int:
        return len(self.s)

    def sample(self, s) -> tuple[np.ndarray, ...]:
        """Interpolate (x, y, heading, curvature, dcurvature) at arc length(s)."""
        s = np.asarray(s, dtype=float)
        return (
            np.interp(s, self.s, self.x),
            np.interp(s, self.s, self.y),
            np.interp(s, self.s, self.heading),
            np.interp(s, self.s, self.curvature),
            np.interp(s, self.s, self.dcurvature),
        )

    def point(self, s: float) -> tuple[float, float]:
        x, y, *_ = self.sample(s)
        return float(x), float(y)

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "s": self.s.tolist(),
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "heading": self.heading.tolist(),
            "curvature": self.curvature.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReferencePath":
        s = np.asarray(data["s"], dtype=float)
        curvature = np.asarray(data["curvature"], dtype=float)
        return cls(
            s=s,
            x=np.asarray(data["x"], dtype=float),
            y=np.asarray(data["y"], dtype=float),
            heading=np.asarray(data["heading"], dtype=float),
            curvature=curvature,
            dcurvature=np.gradient(curvature, s),
            name=data.get("name", ""),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_json(cls, path) -> "ReferencePath":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "x", "y", "heading", "curvature"])
            for row in zip(self.s, self.x, self.y, self.heading, self.curvature):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, name: str = "") -> "ReferencePath":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls.from_dict({
            "name": name, "s": data[:, 0], "x": data[:, 1], "y": data[:, 2],
            "heading": data[:, 3], "curvature": data[:, 4],
        })


def build_reference_path(waypoints: Sequence[Sequence[float]], resample_step: float,
                         name: str = "") -> ReferencePath:
    """Resample a waypoint polyline at uniform arc-length spacing.

    Args:
        waypoints: ordered (x, y) points, at least two, no consecutive duplicates.
        resample_step: maximum spacing between output samples (m).
        name: optional label carried on the path.

    Raises:
        PathError: on too few points, duplicate consecutive points or a
            non-positive step.
    """
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise PathError("need at least 2 waypoints of the form (x, y)")
    if resample_step <= 0:
        raise PathError("resample_step must be positive")
    seg = np.hypot(*np.diff(pts, axis=0).T)
    if np.any(seg < 1e-9):
        idx = int(np.argmax(seg < 1e-9))
        raise PathError(f"duplicate consecutive waypoints at index {idx}")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    n = int(np.ceil(total / resample_step - 1e-9))
    s = np.linspace(0.0, total, n + 1)
    x = np.interp(s, cum, pts[:, 0])
    y = np.interp(s, cum, pts[:, 1])
    return _path_from_samples(s, x, y, name)


def _path_from_samples(s, x, y, name="") -> ReferencePath:
    if len(s) == 2:
        heading = np.full(2, np.arctan2(y[1] - y[0], x[1] - x[0]))
    else:
        dx = np.gradient(x, s)
        dy = np.gradient(y, s)
        heading = np.unwrap(np.arctan2(dy, dx))
    curvature = np.gradient(heading, s) if len(s) > 2 else np.zeros_like(s)
    dcurvature = np.gradient(curvature, s) if len(s) > 2 else np.zeros_like(s)
    return ReferencePath(s=s, x=x, y=y, heading=heading, curvature=curvature,
                         dcurvature=dcurvature, name=name)


def path_from_curvature(start, heading: float, segments: Sequence[Sequence[float]],
                        step: float = 0.1, name: str = "") -> ReferencePath:
    """Integrate a piecewise-linear curvature profile into a path.

    Each segment is ``(length, k_start, k_end)``; curvature varies linearly
    along it (a clothoid when the ends differ). Positive curvature turns left.
    """
    fine = min(step / 10.0, 0.01)
    s_parts, k_parts = [np.zeros(1)], [np.array([segments[0][1]])]
    offset = 0.0
    for length, k0, k1 in segments:
        u = np.linspace(0.0, 1.0, max(int(np.ceil(length / fine)), 1) + 1)[1:]
        s_parts.append(offset + u * length)
        k_parts.append(k0 + u * (k1 - k0))
        offset += length
    s = np.concatenate(s_parts)
    k = np.concatenate(k_parts)
    ds = np.diff(s)
    th = heading + np.concatenate([[0.0], np.cumsum(0.5 * (k[1:] + k[:-1]) * ds)])
    th_mid = 0.5 * (th[1:] + th[:-1])
    x = start[0] + np.concatenate([[0.0], np.cumsum(np.cos(th_mid) * ds)])
    y = start[1] + np.concatenate([[0.0], np.cumsum(np.sin(th_mid) * ds)])
    return build_reference_path(np.column_stack([x, y]), step, name=name)


# ---------------------------------------------------------------------------
# projection


def _nearest_index(path: ReferencePath, px, py) -> np.ndarray:
    _, idx = path.kdtree.query(np.column_stack([px, py]))
    return np.asarray(idx)


def project_points(path: ReferencePath, px, py, iterations: int = 8):
    """Foot-of-normal projection of points onto ``path``.

    Returns arrays ``(s, l)``. The seed is the nearest resampled point,
    refined by Newton steps on ``(p - r(s)) . t(s) = 0``.
    """
    px = np.atleast_1d(np.asarray(px, dtype=float))
    py = np.atleast_1d(np.asarray(py, dtype=float))
    idx = _nearest_index(path, px, py)
    s = path.s[idx].astype(float)
    L = path.total_length
    for _ in range(iterations):
        x, y, h, k, _ = path.sample(s)
        tx, ty = np.cos(h), np.sin(h)
        dx, dy = px - x, py - y
        g = dx * tx + dy * ty
        l = -dx * ty + dy * tx
        denom = 1.0 - k * l
        denom = np.where(np.abs(denom) < 0.1, np.sign(denom + 1e-300) * 0.1, denom)
        s_new = np.clip(s + g / denom, 0.0, L)
        if np.all(np.abs(s_new - s) < 1e-13):
            s = s_new
            break
        s = s_new
    x, y, h, _, _ = path.sample(s)
    l = -(px - x) * np.sin(h) + (py - y) * np.cos(h)
    return s, l


def _check_ambiguity(path: ReferencePath, px: float, py: float, s_best: float,
                     tol: float, gap: float) -> None:
    d = np.hypot(path.x - px, path.y - py)
    n = len(d)
    # local minima of the sampled distance profile (plateaus count)
    left = np.concatenate([[np.inf], d[:-1]])
    right = np.concatenate([d[1:], [np.inf]])
    minima = np.flatnonzero((d <= left) & (d <= right))
    if n < 3 or len(minima) < 2:
        return
    far = minima[np.abs(path.s[minima] - s_best) > gap]
    if len(far) == 0:
        return
    best = float(np.min(d[minima]))
    j = far[np.argmin(d[far])]
    if d[j] - best < tol:
        raise AmbiguousProjectionError(
            f"projection ambiguous: s={s_best:.3f} and s={path.s[j]:.3f} are equidistant",
            (float(s_best), float(path.s[j])),
        )


def cartesian_to_frenet(path: ReferencePath, pose: Sequence[float],
                        max_projection_distance: float = 15.0,
                        ambiguity_tol: float = 1e-3) -> FrenetState:
    """Convert a Cartesian pose to a Frenet state on ``path``.

    ``pose`` is ``(x, y, heading, v, a)`` with an optional sixth entry for
    the trajectory curvature (needed to recover lateral acceleration exactly).
    """
    x, y, heading, v, a = (float(p) for p in pose[:5])
    curvature = float(pose[5]) if len(pose) > 5 else 0.0
    ch, sh = np.cos(heading), np.sin(heading)
    vx, vy = v * ch, v * sh
    an = v * v * curvature
    ax, ay = a * ch - an * sh, a * sh + an * ch
    s, l = project_points(path, [x], [y])
    px, py, *_ = path.sample(s)
    dist = float(np.hypot(x - px[0], y - py[0]))
    if dist > max_projection_distance:
        raise ProjectionError(
            f"pose is {dist:.2f} m from path, beyond max_projection_distance "
            f"{max_projection_distance} m")
    _check_ambiguity(path, x, y, float(s[0]), ambiguity_tol,
                     gap=max(4 * float(path.s[1] - path.s[0]), 1e-6))
    out = cartesian_to_frenet_arrays(path, [x], [y], [vx], [vy], [ax], [ay], s=s, l=l)
    return FrenetState(*(float(c[0]) for c in out))


def cartesian_to_frenet_arrays(path: ReferencePath, x, y, vx, vy, ax, ay, s=None, l=None):
    """Vectorized Cartesian kinematics -> ``(s, l, v_s, v_l, a_s, a_l)``.

    ``v_s`` and ``a_s`` are time derivatives of the arc-length coordinate.
    """
    x, y, vx, vy, ax, ay = (np.asarray(v, dtype=float) for v in (x, y, vx, vy, ax, ay))
    if s is None:
        s, l = project_points(path, x, y)
    _, _, h, k, dk = path.sample(s)
    tx, ty = np.cos(h), np.sin(h)
    one_m = 1.0 - k * l
    vel_t = vx * tx + vy * ty
    vel_n = -vx * ty + vy * tx
    acc_t = ax * tx + ay * ty
    acc_n = -ax * ty + ay * tx
    ds = vel_t / one_m
    dl = vel_n
    ddl = acc_n - k * ds * ds * one_m
    dds = (acc_t + ds * (dk * ds * l + 2.0 * k * dl)) / one_m
    return s, l, ds, dl, dds, ddl


def frenet_to_cartesian_arrays(path: ReferencePath, s, l, ds, dl, dds, ddl):
    """Vectorized Frenet kinematics -> Cartesian quantities.

    Returns a dict with x, y, vx, vy, ax, ay, speed, heading, accel
    (tangential), curvature.
    """
    s, l, ds, dl, dds, ddl = (np.asarray(v, dtype=float) for v in (s, l, ds, dl, dds, ddl))
    rx, ry, h, k, dk = path.sample(s)
    tx, ty = np.cos(h), np.sin(h)
    one_m = 1.0 - k * l
    x = rx - l * ty
    y = ry + l * tx
    vel_t = ds * one_m
    vel_n = dl
    acc_t = dds * one_m - ds * (dk * ds * l + 2.0 * k * dl)
    acc_n = k * ds * ds * one_m + ddl
    speed = np.hypot(vel_t, vel_n)
    moving = speed > HEADING_SPEED_EPS
    safe = np.where(moving, speed, 1.0)
    heading = h + np.where(moving, np.arctan2(vel_n, vel_t), 0.0)
    accel = np.where(moving, (vel_t * acc_t + vel_n * acc_n) / safe, acc_t)
    curvature = np.where(moving, (vel_t * acc_n - vel_n * acc_t) / safe ** 3, 0.0)
    vx = vel_t * tx - vel_n * ty
    vy = vel_t * ty + vel_n * tx
    ax = acc_t * tx - acc_n * ty
    ay = acc_t * ty + acc_n * tx
    return {"x": x, "y": y, "vx": vx, "vy": vy, "ax": ax, "ay": ay, "speed": speed,
            "heading": heading, "accel": accel, "curvature": curvature}


def frenet_to_cartesian(path: ReferencePath, state: FrenetState) -> CartesianState:
    """Map a Frenet state to ``(x, y, heading, v, a, curvature)``."""
    if not (-1e-9 <= state.s <= path.total_length + 1e-9):
        raise PathError(f"s={state.s} outside path domain [0, {path.total_length}]")
    out = frenet_to_cartesian_arrays(path, *([v] for v in state.as_tuple()))
    return CartesianState(*(float(out[k][0]) for k in
                            ("x", "y", "heading", "speed", "accel", "curvature")))


# ---------------------------------------------------------------------------
# conflict points


@dataclass(frozen=True)
class ConflictGeometry:
    point: tuple[float, float]
    s_cp_left: float
    s_cp_straight: float
    crossing_angle: float
    straight_heading: float = 0.0

    def swapped(self) -> "ConflictGeometry":
        return ConflictGeometry(self.point, self.s_cp_straight, self.s_cp_left,
                                self.crossing_angle, self.straight_heading)

    def to_dict(self) -> dict:
        return {"point": list(self.point), "s_cp_left": self.s_cp_left,
                "s_cp_straight": self.s_cp_straight,
                "crossing_angle": self.crossing_angle,
                "straight_heading": self.straight_heading}

    @classmethod
    def from_dict(cls, d: dict) -> "ConflictGeometry":
        return cls(tuple(d["point"]), d["s_cp_left"], d["s_cp_straight"],
                   d["crossing_angle"], d.get("straight_heading", 0.0))


def segment_intersections(a: np.ndarray, b: np.ndarray):
    """All proper intersections between polylines ``a`` and ``b``.

    Returns a list of ``(i, j, ta, tb)`` with segment indices and the
    parameters along each segment.
    """
    p, r = a[:-1], np.diff(a, axis=0)
    q, s = b[:-1], np.diff(b, axis=0)
    # coarse bounding-box prefilter
    amin, amax = np.minimum(a[:-1], a[1:]), np.maximum(a[:-1], a[1:])
    bmin, bmax = np.minimum(b[:-1], b[1:]), np.maximum(b[:-1], b[1:])
    hits = []
    for j in range(len(q)):
        cand = np.flatnonzero(np.all(amin <= bmax[j] + 1e-12, axis=1)
                              & np.all(amax >= bmin[j] - 1e-12, axis=1))
        if len(cand) == 0:
            continue
        rr = r[cand]
        qp = q[j] - p[cand]
        denom = rr[:, 0] * s[j, 1] - rr[:, 1] * s[j, 0]
        ok = np.abs(denom) > 1e-15
        ta = np.where(ok, (qp[:, 0] * s[j, 1] - qp[:, 1] * s[j, 0]) / np.where(ok, denom, 1), -1)
        tb = np.where(ok, (qp[:, 0] * rr[:, 1] - qp[:, 1] * rr[:, 0]) / np.where(ok, denom, 1), -1)
        sel = ok & (ta >= 0) & (ta <= 1) & (tb >= 0) & (tb <= 1)
        for i, u, w in zip(cand[sel], ta[sel], tb[sel]):
            hits.append((int(i), j, float(u), float(w)))
    return hits


def _dedupe_hits(hits, a, b, tol=1e-6):
    pts = []
    for i, j, u, w in hits:
        pt = a[i] + u * (a[i + 1] - a[i])
        if all(np.hypot(*(pt - q[0])) > tol for q in pts):
            pts.append((pt, i, j, u, w))
    return pts


def find_conflict_point(left_path: ReferencePath, straight_path: ReferencePath) -> ConflictGeometry:
    """Unique crossing of two reference polylines.

    Raises:
        ConflictError: when the paths cross zero or several times.
    """
    a, b = left_path.xy, straight_path.xy
    hits = _dedupe_hits(segment_intersections(a, b), a, b)
    if len(hits) != 1:
        raise ConflictError(len(hits))
    pt, i, j, u, w = hits[0]
    s_left = float(left_path.s[i] + u * (left_path.s[i + 1] - left_path.s[i]))
    s_straight = float(straight_path.s[j] + w * (straight_path.s[j + 1] - straight_path.s[j]))
    ha = np.arctan2(*(a[i + 1] - a[i])[::-1])
    hb = np.arctan2(*(b[j + 1] - b[j])[::-1])
    angle = abs((ha - hb + np.pi) % (2 * np.pi) - np.pi)
    return ConflictGeometry((float(pt[0]), float(pt[1])), s_left, s_straight, float(angle),
                            straight_heading=float(hb))


def polyline_length(points: Iterable[Sequence[float]]) -> float:
    pts = np.asarray(list(points), dtype=float)
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))
