"""Trajectory reward features and the linear reward.

Raw features (before z-scoring):

* efficiency: ``-sqrt(sum (v - v_target)^2) / T`` (m/s, <= 0)
* comfort: ``-sum sqrt(jerk_s^2 + jerk_l^2) / T`` (<= 0)
* safe_s: mean gap between the two vehicles' times to the conflict point (s, >= 0)
* safe_l: mean time shift induced by the lateral offset (s, >= 0)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import ConflictGeometry
from .trajectory import CandidateBatch, Track, Trajectory

FEATURE_NAMES = ("efficiency", "comfort", "safe_s", "safe_l")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    efficiency: float
    comfort: float
    safe_s: float
    safe_l: float

    def as_array(self) -> np.ndarray:
        return np.array([self.efficiency, self.comfort, self.safe_s, self.safe_l])

    @classmethod
    def from_array(cls, arr) -> "FeatureVector":
        return cls(*map(float, arr))


@dataclass
class RewardContext:
    v_target: float
    conflict: Optional[ConflictGeometry]
    straight: Optional[Track] = None
    eps_v: float = 0.5
    ttcp_max: float = 10.0
    theta_min: float = np.deg2rad(5.0)
    theta_max: float = np.deg2rad(85.0)

    def __post_init__(self):
        if not self.v_target > 0:
            raise FeatureError("v_target must be positive")
        if not self.eps_v > 0:
            raise FeatureError("eps_v must be positive")


@dataclass
class FeatureNormalizer:
    mean: np.ndarray = field(default_factory=lambda: np.zeros(4))
    std: np.ndarray = field(default_factory=lambda: np.ones(4))

    @classmethod
    def fit(cls, raw: np.ndarray) -> "FeatureNormalizer":
        raw = np.atleast_2d(raw)
        sd = raw.std(axis=0)
        return cls(raw.mean(axis=0), np.where(sd > 1e-12, sd, 1.0))

    def __call__(self, raw) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureNormalizer":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


def _duration(valid: np.ndarray, dt: float) -> np.ndarray:
    return np.maximum(valid.sum(axis=1) - 1, 1) * dt


def efficiency_batch(speed, valid, dt, v_target) -> np.ndarray:
    sq = np.where(valid, (speed - v_target) ** 2, 0.0)
    return -np.sqrt(sq.sum(axis=1)) / _duration(valid, dt)


def comfort_batch(jerk_s, jerk_l, valid, dt) -> np.ndarray:
    j = np.where(valid, np.hypot(jerk_s, jerk_l), 0.0)
    return -j.sum(axis=1) / _duration(valid, dt)


def _straight_state(ctx: RewardContext, times: np.ndarray):
    """Straight-vehicle arc length and speed; NaN where no log exists."""
    if ctx.straight is None or len(ctx.straight) == 0:
        nan = np.full(times.shape, np.nan)
        return nan, nan
    st = ctx.straight.sample(times)
    if "s" not in st:
        raise FeatureError("straight track lacks arc length along its path")
    s = np.where(st["inside"], st["s"], np.nan)
    v = np.where(st["inside"], st["speed"], np.nan)
    return s, v


def _interaction_terms(s_left, v_left, l, heading, times, ctx: RewardContext):
    if ctx.conflict is None:
        raise FeatureError("missing conflict geometry")
    cg = ctx.conflict
    s_str, v_str = _straight_state(ctx, times)
    active = (s_left < cg.s_cp_left) & (s_str < cg.s_cp_straight)  # NaN compares False
    vl = np.maximum(v_left, ctx.eps_v)
    vs = np.maximum(np.nan_to_num(v_str, nan=ctx.eps_v), ctx.eps_v)
    ttcp_l = (cg.s_cp_left - s_left) / vl
    ttcp_s = (cg.s_cp_straight - np.nan_to_num(s_str, nan=cg.s_cp_straight)) / vs
    dlon = np.where(active, np.minimum(np.abs(ttcp_l - ttcp_s), ctx.ttcp_max), ctx.ttcp_max)
    rel = np.mod(heading - cg.straight_heading + np.pi, 2.0 * np.pi) - np.pi
    ang = np.abs(rel)
    ang = np.minimum(ang, np.pi - ang)
    ang = np.clip(ang, ctx.theta_min, ctx.theta_max)
    dlat = np.abs(l * np.tan(ang) / vl + l * np.cos(ang) / vs)
    dlat = np.where(active, dlat, 0.0)
    return dlon, dlat


def _masked_mean(vals, valid):
    return np.where(valid, vals, 0.0).sum(axis=1) / np.maximum(valid.sum(axis=1), 1)


def compute_features_batch(batch: CandidateBatch, ctx: RewardContext, t0: float = 0.0) -> np.ndarray:
    """Raw ``(M, 4)`` feature matrix for a candidate batch starting at ``t0``."""
    valid = batch.valid
    times = np.broadcast_to(t0 + batch.t, valid.shape)
    dlon, dlat = _interaction_terms(batch["s"], batch["v_s"], batch["l"], batch["heading"],
                                    times, ctx)
    return np.column_stack([
        efficiency_batch(batch["speed"], valid, batch.dt, ctx.v_target),
        comfort_batch(batch["jerk_s"], batch["jerk_l"], valid, batch.dt),
        _masked_mean(dlon, valid),
        _masked_mean(dlat, valid),
    ])


def compute_features(traj: Trajectory, ctx: RewardContext) -> FeatureVector:
    valid = np.ones((1, len(traj)), dtype=bool)
    times = traj.abs_t[None]
    dlon, dlat = _interaction_terms(traj.s[None], traj.v_s[None], traj.l[None],
                                    traj.heading[None], times, ctx)
    return FeatureVector(
        float(efficiency_batch(traj.speed[None], valid, traj.dt, ctx.v_target)[0]),
        float(comfort_batch(traj.jerk_s[None], traj.jerk_l[None], valid, traj.dt)[0]),
        float(_masked_mean(dlon, valid)[0]),
        float(_masked_mean(dlat, valid)[0]),
    )


def feature_efficiency(traj: Trajectory, v_target: float) -> float:
    valid = np.ones((1, len(traj)), dtype=bool)
    return float(efficiency_batch(traj.speed[None], valid, traj.dt, v_target)[0])


def feature_comfort(traj: Trajectory) -> float:
    valid = np.ones((1, len(traj)), dtype=bool)
    return float(comfort_batch(traj.jerk_s[None], traj.jerk_l[None], valid, traj.dt)[0])


def feature_safety_longitudinal(traj: Trajectory, ctx: RewardContext) -> float:
    return compute_features(traj, ctx).safe_s


def feature_safety_lateral(traj: Trajectory, ctx: RewardContext) -> float:
    return compute_features(traj, ctx).safe_l


def reward(theta, features) -> np.ndarray:
    """Linear reward ``features @ theta`` (features already normalized)."""
    return np.asarray(features, dtype=float) @ np.asarray(theta, dtype=float)


def write_feature_csv(path, raw: np.ndarray, normalized: np.ndarray, rewards: np.ndarray,
                      ids=None) -> None:
    ids = range(len(raw)) if ids is None else ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate_id", *FEATURE_NAMES, *(f"{n}_norm" for n in FEATURE_NAMES), "reward"])
        for i, r, z, rew in zip(ids, raw, normalized, rewards):
            w.writerow([int(i), *(repr(float(v)) for v in r), *(repr(float(v)) for v in z),
                        repr(float(rew))])
