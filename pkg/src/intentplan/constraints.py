"""Kinematic bounds and safety-box collision filtering."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np

from .trajectory import CandidateBatch, Track, Trajectory

# curvature of a nearly stopped polynomial path is numerically meaningless
CURVATURE_SPEED_MIN = 0.5
REVERSE_TOL = 1e-6


@dataclass(frozen=True)
class KinematicBounds:
    v_min: float = 0.0
    v_max: float = 16.7
    a_min: float = -4.0
    a_max: float = 3.0
    c_min: float = -0.35
    c_max: float = 0.35

    def __post_init__(self):
        for lo, hi in (("v_min", "v_max"), ("a_min", "a_max"), ("c_min", "c_max")):
            if not getattr(self, lo) < getattr(self, hi):
                raise ValueError(f"{lo} must be < {hi}")

    @classmethod
    def from_corpus(cls, trajectories: Iterable, headroom: float = 0.1) -> "KinematicBounds":
        """Min/max of speed, acceleration and curvature widened by ``headroom``."""
        v, a, c = [], [], []
        for tr in trajectories:
            v.append(np.asarray(tr.speed))
            a.append(np.asarray(tr.accel))
            fast = np.asarray(tr.speed) > CURVATURE_SPEED_MIN
            c.append(np.asarray(tr.curvature)[fast])
        v, a, c = (np.concatenate(x) for x in (v, a, c))

        def widen(arr):
            lo, hi = float(arr.min()), float(arr.max())
            pad = headroom * max(abs(lo), abs(hi), 1e-6)
            return lo - pad, hi + pad

        v_lo, v_hi = widen(v)
        a_lo, a_hi = widen(a)
        c_lo, c_hi = widen(c) if c.size else (-0.35, 0.35)
        return cls(max(v_lo, 0.0), v_hi, a_lo, a_hi, c_lo, c_hi)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class VehicleFootprint:
    length: float = 4.5
    width: float = 1.8
    margin_longitudinal: float = 0.5
    margin_lateral: float = 0.3

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError("vehicle dimensions must be positive")
        if self.margin_longitudinal < 0 or self.margin_lateral < 0:
            raise ValueError("margins must be non-negative")

    @property
    def box_length(self) -> float:
        return self.length + 2.0 * self.margin_longitudinal

    @property
    def box_width(self) -> float:
        return self.width + 2.0 * self.margin_lateral

    def without_margins(self) -> "VehicleFootprint":
        return VehicleFootprint(self.length, self.width, 0.0, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    index: Optional[int] = None
    time: Optional[float] = None
    reason: str = ""


def _kinematic_violations(speed, accel, curvature, v_s, b: KinematicBounds):
    fast = speed > CURVATURE_SPEED_MIN
    return ((speed < b.v_min) | (speed > b.v_max)
            | (accel < b.a_min) | (accel > b.a_max)
            | (fast & ((curvature < b.c_min) | (curvature > b.c_max)))
            | (v_s < -REVERSE_TOL))


def kinematic_feasible(traj: Trajectory, bounds: KinematicBounds) -> CheckResult:
    """Pointwise speed, tangential acceleration and curvature check.

    Curvature is only enforced above ``CURVATURE_SPEED_MIN``; backwards
    motion along the path is rejected.
    """
    bad = _kinematic_violations(traj.speed, traj.accel, traj.curvature, traj.v_s, bounds)
    if not bad.any():
        return CheckResult(True)
    i = int(np.argmax(bad))
    return CheckResult(False, i, float(traj.t[i]), "kinematic")


def kinematic_mask(batch: CandidateBatch, bounds: KinematicBounds) -> np.ndarray:
    bad = _kinematic_violations(batch["speed"], batch["accel"], batch["curvature"],
                                batch["v_s"], bounds)
    return ~np.any(bad & batch.valid, axis=1)


def box_corners(x, y, heading, length: float, width: float) -> np.ndarray:
    """Corners ``(..., 4, 2)`` of rectangles centred at ``(x, y)``."""
    x, y, heading = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, heading)))
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    cx = x[..., None] + c[..., None] * local[:, 0] - s[..., None] * local[:, 1]
    cy = y[..., None] + s[..., None] * local[:, 0] + c[..., None] * local[:, 1]
    return np.stack([cx, cy], axis=-1)


def safety_box(point, footprint: VehicleFootprint) -> np.ndarray:
    """Safety rectangle corners for a trajectory point or ``(x, y, heading)``."""
    if hasattr(point, "heading"):
        x, y, h = point.x, point.y, point.heading
    else:
        x, y, h = point
    if not np.isfinite(h):
        raise ValueError("heading must be finite")
    return box_corners(x, y, h, footprint.box_length, footprint.box_width)


def _axes(corners: np.ndarray) -> np.ndarray:
    e1 = corners[..., 1, :] - corners[..., 0, :]
    e2 = corners[..., 3, :] - corners[..., 0, :]
    return np.stack([e1, e2], axis=-2)


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Separating-axis test for convex quads ``(..., 4, 2)``; touching counts."""
    axes = np.concatenate([_axes(a), _axes(b)], axis=-2)  # (..., 4, 2)
    pa = np.einsum("...kd,...cd->...kc", axes, a)
    pb = np.einsum("...kd,...cd->...kc", axes, b)
    separated = (pa.max(-1) < pb.min(-1)) | (pb.max(-1) < pa.min(-1))
    return ~np.any(separated, axis=-1)


def _straight_boxes(straight: Track, times: np.ndarray, fp: VehicleFootprint):
    st = straight.sample(times)
    return box_corners(st["x"], st["y"], st["heading"], fp.box_length, fp.box_width), st["inside"]


def collision_free(left, straight, footprints, dt_tol: float = 1e-9) -> CheckResult:
    """Safety boxes of both vehicles must be disjoint at every shared timestep.

    ``left`` is a Trajectory; ``straight`` a Trajectory or Track. Only
    timestamps covered by both are checked.
    """
    fp_left, fp_straight = _pair(footprints)
    if isinstance(straight, Trajectory):
        if abs(straight.dt - left.dt) > dt_tol:
            raise ValueError(f"mismatched dt: {left.dt} vs {straight.dt}")
        straight = Track.from_trajectory(straight)
    elif len(straight) > 1 and abs(straight.dt - left.dt) > 1e-6:
        raise ValueError(f"mismatched dt: {left.dt} vs {straight.dt}")
    times = left.abs_t
    sb, inside = _straight_boxes(straight, times, fp_straight)
    lb = box_corners(left.x, left.y, left.heading, fp_left.box_length, fp_left.box_width)
    hit = boxes_overlap(lb, sb) & inside
    if not hit.any():
        return CheckResult(True)
    i = int(np.argmax(hit))
    return CheckResult(False, i, float(times[i]), "collision")


def _pair(footprints):
    if isinstance(footprints, VehicleFootprint):
        return footprints, footprints
    left, straight = footprints
    return left, straight


def collision_mask(batch: CandidateBatch, straight: Optional[Track], footprints,
                   t0: float = 0.0) -> np.ndarray:
    """Per-candidate collision freedom against ``straight`` (True = clear)."""
    if straight is None or len(straight) == 0:
        return np.ones(len(batch), dtype=bool)
    fp_left, fp_straight = _pair(footprints)
    times = t0 + batch.t
    sb, inside = _straight_boxes(straight, times, fp_straight)
    lb = box_corners(batch["x"], batch["y"], batch["heading"], fp_left.box_length,
                     fp_left.box_width)
    # cheap circumscribed-circle prefilter before the exact test
    r = 0.5 * (np.hypot(fp_left.box_length, fp_left.box_width)
               + np.hypot(fp_straight.box_length, fp_straight.box_width))
    st = straight.sample(times)
    near = (np.hypot(batch["x"] - st["x"][None], batch["y"] - st["y"][None]) <= r)
    near &= batch.valid & inside[None]
    hit = np.zeros(near.shape, dtype=bool)
    if near.any():
        idx = np.nonzero(near)
        hit[idx] = boxes_overlap(lb[idx], sb[idx[1]])
    return ~hit.any(axis=1)


@dataclass
class FilterResult:
    batch: CandidateBatch
    indices: np.ndarray
    counts: dict


def filter_candidates(batch: CandidateBatch, straight: Optional[Track], bounds: KinematicBounds,
                      footprints, t0: float = 0.0) -> FilterResult:
    """Drop candidates that leave the path, break bounds or collide.

    Order is preserved. Each rejected candidate is counted once, under the
    first failing check (domain, then kinematic, then collision).
    """
    domain = np.asarray(batch["in_domain"], dtype=bool)
    kin = kinematic_mask(batch, bounds) & domain
    col = np.ones(len(batch), dtype=bool)
    if kin.any():
        sub = np.nonzero(kin)[0]
        col[sub] = collision_mask(batch.subset(sub), straight, footprints, t0)
    keep = kin & col
    idx = np.nonzero(keep)[0]
    counts = {
        "total": int(len(batch)),
        "domain": int((~domain).sum()),
        "kinematic": int((domain & ~kin).sum()),
        "collision": int((kin & ~col).sum()),
        "survivors": int(keep.sum()),
    }
    return FilterResult(batch.subset(idx), idx, counts)
