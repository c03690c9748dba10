"""Interaction-event CSV ingestion, export and train/test splitting.

Rows follow ``EVENT_COLUMNS``; one left-turn and one straight vehicle per
event. A ``decision`` column (proceed/yield) labels the event.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import savgol_filter

from .geometry import cartesian_to_frenet_arrays, project_points
from .intent_space import Decision
from .scenario import Scenario
from .trajectory import Track, Trajectory

log = logging.getLogger(__name__)

EVENT_COLUMNS = ("event_id", "vehicle_id", "role", "frame", "t", "x", "y", "vx", "vy",
                 "ax", "ay", "heading", "decision")
NUMERIC = ("t", "x", "y", "vx", "vy", "ax", "ay", "heading")
SLOW = 0.1


class DataError(ValueError):
    pass


@dataclass
class VehicleLog:
    vehicle_id: str
    role: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    heading: np.ndarray

    def resample(self, dt: float) -> "VehicleLog":
        """Linear interpolation onto a uniform grid starting at the first sample."""
        n = int(np.floor((self.t[-1] - self.t[0]) / dt + 1e-9)) + 1
        t = self.t[0] + np.arange(n) * dt
        if len(t) == len(self.t) and np.allclose(t, self.t, atol=1e-9):
            return self
        cols = {k: np.interp(t, self.t, getattr(self, k)) for k in ("x", "y", "vx", "vy", "ax", "ay")}
        cols["heading"] = np.interp(t, self.t, np.unwrap(self.heading))
        return VehicleLog(self.vehicle_id, self.role, t, **cols)

    def smoothed(self, window: float, order: int = 3) -> "VehicleLog":
        """Savitzky-Golay smoothing of positions over ``window`` seconds.

        Velocities and accelerations are kept as reported.
        """
        if window <= 0 or len(self.t) < 3:
            return self
        dt = float(np.median(np.diff(self.t)))
        n = int(round(window / dt)) | 1
        n = min(n, len(self.t) if len(self.t) % 2 else len(self.t) - 1)
        if n <= order:
            return self
        return VehicleLog(self.vehicle_id, self.role, self.t,
                          savgol_filter(self.x, n, order, mode="interp"),
                          savgol_filter(self.y, n, order, mode="interp"),
                          self.vx, self.vy, self.ax, self.ay, self.heading)


@dataclass
class InteractionEvent:
    event_id: str
    decision: Decision
    left: Trajectory
    straight: Track
    left_log: VehicleLog
    straight_log: VehicleLog
    meta: dict = field(default_factory=dict)

    @property
    def t_start(self) -> float:
        return float(self.left.t0)

    @property
    def t_end(self) -> float:
        return float(self.left.abs_t[-1])


def left_trajectory(log_: VehicleLog, scenario: Scenario, decision: Optional[str] = None) -> Trajectory:
    """Frenet/Cartesian trajectory of the left-turn vehicle on its reference path.

    Jerks are finite differences of the Frenet accelerations.
    """
    path = scenario.left_path
    s, l, v_s, v_l, a_s, a_l = cartesian_to_frenet_arrays(
        path, log_.x, log_.y, log_.vx, log_.vy, log_.ax, log_.ay)
    dt = float(log_.t[1] - log_.t[0]) if len(log_.t) > 1 else 0.1
    edge = 2 if len(log_.t) > 2 else 1
    jerk_s = np.gradient(a_s, dt, edge_order=edge) if len(a_s) > 1 else np.zeros_like(a_s)
    jerk_l = np.gradient(a_l, dt, edge_order=edge) if len(a_l) > 1 else np.zeros_like(a_l)
    speed = np.hypot(log_.vx, log_.vy)
    moving = speed > SLOW
    safe = np.where(moving, speed, 1.0)
    accel = np.where(moving, (log_.vx * log_.ax + log_.vy * log_.ay) / safe, 0.0)
    curv = np.where(moving, (log_.vx * log_.ay - log_.vy * log_.ax) / safe ** 3, 0.0)
    return Trajectory(t=log_.t - log_.t[0], s=s, l=l, v_s=v_s, v_l=v_l, a_s=a_s, a_l=a_l,
                      x=log_.x.copy(), y=log_.y.copy(), heading=log_.heading.copy(), speed=speed,
                      accel=accel, jerk_s=jerk_s, jerk_l=jerk_l, curvature=curv, dt=dt,
                      decision=decision, t0=float(log_.t[0]))


def straight_track(log_: VehicleLog, scenario: Scenario) -> Track:
    s, _ = project_points(scenario.straight_path, log_.x, log_.y)
    return Track(log_.t, log_.x, log_.y, log_.heading, np.hypot(log_.vx, log_.vy), s)


def check_consistency(log_: VehicleLog, window: float = 1.0, rel: float = 0.1,
                      abs_tol: float = 0.1) -> list[int]:
    """Indices whose reported speed disagrees with displacement over ``window``.

    Each reported speed is compared with the displacement speed over a
    centred window; the window keeps positional noise in check.
    """
    if len(log_.t) < 3:
        return []
    dt = float(np.median(np.diff(log_.t)))
    h = max(int(round(0.5 * window / dt)), 1)
    bad = []
    n = len(log_.t)
    for i in range(n):
        a, b = max(i - h, 0), min(i + h, n - 1)
        if b == a:
            continue
        span = log_.t[b] - log_.t[a]
        disp = np.hypot(log_.x[b] - log_.x[a], log_.y[b] - log_.y[a]) / span
        rep = np.hypot(log_.vx[i], log_.vy[i])
        if abs(rep - disp) > rel * max(disp, rep) + abs_tol:
            bad.append(i)
    return bad


@dataclass
class LoadResult:
    events: list
    warnings: list


def _parse_rows(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in EVENT_COLUMNS[:-1] if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"missing columns: {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = {k: float(row[k]) for k in NUMERIC}
                rec["frame"] = int(row["frame"])
            except (TypeError, ValueError) as err:
                raise DataError(f"row {lineno}: malformed value ({err})") from None
            if not all(np.isfinite(v) for v in rec.values()):
                raise DataError(f"row {lineno}: non-finite value")
            role = (row.get("role") or "").strip().lower()
            if role not in ("left", "straight"):
                raise DataError(f"row {lineno}: role must be 'left' or 'straight', got {role!r}")
            rec.update(event_id=row["event_id"], vehicle_id=row["vehicle_id"], role=role,
                       decision=(row.get("decision") or "").strip(), line=lineno)
            rows.append(rec)
    return rows


def _build_log(recs: list[dict], frame_dt: float) -> VehicleLog:
    frames = np.array([r["frame"] for r in recs])
    if np.any(np.diff(frames) <= 0):
        bad = recs[int(np.argmax(np.diff(frames) <= 0)) + 1]
        raise DataError(f"row {bad.get('line', '?')}: frames not strictly increasing for vehicle "
                        f"{recs[0]['vehicle_id']}")
    t = frames * frame_dt
    cols = {k: np.array([r[k] for r in recs]) for k in ("x", "y", "vx", "vy", "ax", "ay", "heading")}
    return VehicleLog(recs[0]["vehicle_id"], recs[0]["role"], t, **cols)


def events_from_rows(rows: Sequence[dict], scenario: Scenario, frame_dt: float = 0.1,
                     dt: float = 0.1, manifest: Optional[dict] = None,
                     smooth_window: float = 0.0) -> LoadResult:
    by_event: dict[str, list] = {}
    for r in rows:
        by_event.setdefault(r["event_id"], []).append(r)
    events, warnings = [], []
    meta_by_event = (manifest or {}).get("events", {})
    for eid in sorted(by_event):
        recs = by_event[eid]
        roles = {}
        for r in recs:
            roles.setdefault(r["role"], {}).setdefault(r["vehicle_id"], []).append(r)
        for role in ("left", "straight"):
            if len(roles.get(role, {})) != 1:
                raise DataError(f"event {eid}: expected exactly one {role} vehicle, "
                                f"found {len(roles.get(role, {}))}")
        labels = {r["decision"] for r in recs if r["decision"]}
        if len(labels) != 1:
            raise DataError(f"event {eid}: needs exactly one decision label, found {sorted(labels)}")
        decision = Decision.parse(labels.pop())
        logs = {}
        for role in ("left", "straight"):
            (vrecs,) = roles[role].values()
            vrecs = sorted(vrecs, key=lambda r: r["frame"])
            vlog = _build_log(vrecs, frame_dt)
            frames = np.array([r["frame"] for r in vrecs])
            if np.any(np.diff(frames) > 1):
                warnings.append(f"event {eid} {role}: frame gaps (interpolated)")
            for i in check_consistency(vlog):
                where = f"row {vrecs[i]['line']}" if "line" in vrecs[i] else f"frame {vrecs[i]['frame']}"
                warnings.append(f"event {eid} {role} {where}: "
                                f"velocity inconsistent with positions beyond 10%")
            logs[role] = vlog.smoothed(smooth_window).resample(dt)
        left = left_trajectory(logs["left"], scenario, decision.value)
        straight = straight_track(logs["straight"], scenario)
        events.append(InteractionEvent(eid, decision, left, straight, logs["left"],
                                       logs["straight"], dict(meta_by_event.get(eid, {}))))
    return LoadResult(events, warnings)


def load_events(path, scenario: Scenario, frame_dt: float = 0.1, dt: float = 0.1,
                manifest: Optional[dict] = None, smooth_window: float = 0.0) -> LoadResult:
    """Read an events CSV; trajectories are resampled to ``dt``.

    ``smooth_window`` > 0 applies positional smoothing before resampling.

    Raises:
        DataError: malformed rows (with row number), missing roles or labels,
            non-monotone frames.
    """
    return events_from_rows(_parse_rows(path), scenario, frame_dt, dt, manifest, smooth_window)


def write_event_rows(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVENT_COLUMNS)
        for r in rows:
            w.writerow([r["event_id"], r["vehicle_id"], r["role"], int(r["frame"]),
                        *(repr(float(r[k])) for k in NUMERIC), r.get("decision", "")])


def log_rows(event_id: str, vlog: VehicleLog, frame_dt: float, decision: str) -> list[dict]:
    frames = np.rint(vlog.t / frame_dt).astype(int)
    return [
        {"event_id": event_id, "vehicle_id": vlog.vehicle_id, "role": vlog.role,
         "frame": int(f), "t": float(f * frame_dt), "x": vlog.x[i], "y": vlog.y[i],
         "vx": vlog.vx[i], "vy": vlog.vy[i], "ax": vlog.ax[i], "ay": vlog.ay[i],
         "heading": vlog.heading[i], "decision": decision}
        for i, f in enumerate(frames)
    ]


def split_dataset(items: Sequence, ratio: float = 0.8, seed: int = 0, key=None):
    """Event-level random split into ``(train, test)``.

    ``key`` maps an item to its event id so that items sharing an event stay
    together; by default every item is its own event.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    key = key or (lambda it: getattr(it, "event_id", id(it)))
    ids = sorted({key(it) for it in items}, key=str)
    if len(ids) < 2:
        raise DataError("need at least 2 events to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_train = min(max(int(round(ratio * len(ids))), 1), len(ids) - 1)
    train_ids = {ids[i] for i in order[:n_train]}
    train = [it for it in items if key(it) in train_ids]
    test = [it for it in items if key(it) not in train_ids]
    return train, test
