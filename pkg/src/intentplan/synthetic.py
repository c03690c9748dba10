"""Synthetic interaction corpus with a known reward.

Left-turn demonstrations come from running the planner itself with hidden
weights and a hidden corridor; the straight vehicle drives its lane at a
jittered constant speed. Positional noise is added to the left-turn log.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import VehicleLog, events_from_rows, log_rows, straight_track
from .features import FeatureNormalizer
from .geometry import FrenetState
from .intent_space import CorridorModel, Decision
from .planner import Planner, PlannerConfig, SelectionMode, rolling_plan
from .scenario import Scenario
from .trajectory import Trajectory

TRUTH_CORRIDOR = {
    "bands": {
        "proceed": {"breakpoints": [60.0, 66.0, 72.0, 78.0, 84.0, 90.0, 96.0],
                    "mu": [0.9, 1.5, 1.8, 1.4, 0.8, 0.3, 0.0],
                    "sigma": [0.3, 0.3, 0.3, 0.3, 0.25, 0.2, 0.2]},
        "yield": {"breakpoints": [60.0, 66.0, 72.0, 78.0, 84.0, 90.0, 96.0],
                  "mu": [0.0, -0.8, -1.2, -0.9, -0.4, -0.1, 0.0],
                  "sigma": [0.25, 0.25, 0.25, 0.25, 0.2, 0.2, 0.2]},
    },
    "sigma_floor": 0.05,
    "l_stop_max": 2.0,
    "theta_stop_max": 0.15,
}


@dataclass
class SyntheticConfig:
    n_events: int = 100
    proceed_fraction: float = 0.5
    noise_std: float = 0.1
    seed: int = 0
    temperature: float = 0.05
    theta_star: dict = field(default_factory=lambda: {
        "proceed": [2.0, 1.0, 0.3, 0.3],
        "yield": [1.5, 1.0, 0.6, 0.3],
    })
    # hidden reward scales the raw features by these (mean, std) pairs
    reward_mean: list = field(default_factory=lambda: [-1.5, -8.0, 4.0, 0.3])
    reward_std: list = field(default_factory=lambda: [1.0, 4.0, 2.0, 0.03])
    truth_corridor: dict = field(default_factory=lambda: copy.deepcopy(TRUTH_CORRIDOR))
    replan_dt: Optional[float] = None
    s0: float = 2.0
    l0_std: float = 0.2
    left_speed: tuple = (5.5, 6.5)
    v_target: float = 6.0
    straight_speed: tuple = (9.0, 12.0)
    straight_jitter: float = 0.1
    gap_proceed: tuple = (3.0, 6.0)
    gap_yield: tuple = (-2.5, -0.5)
    straight_tail: float = 10.0
    max_attempts: int = 5
    frame_dt: float = 0.1

    def __post_init__(self):
        if self.n_events < 1:
            raise ValueError("n_events must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0.0 <= self.proceed_fraction <= 1.0:
            raise ValueError("proceed_fraction must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        for k in ("left_speed", "straight_speed", "gap_proceed", "gap_yield"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SyntheticDataset:
    rows: list
    manifest: dict

    def events(self, scenario: Scenario, dt: float = 0.1, smooth_window: float = 0.0):
        return events_from_rows(self.rows, scenario, self.manifest["config"]["frame_dt"], dt,
                                self.manifest, smooth_window).events


def truth_planner(scenario: Scenario, config: SyntheticConfig,
                  planner_config: Optional[PlannerConfig] = None) -> Planner:
    corridor = CorridorModel.from_dict(config.truth_corridor)
    norm = FeatureNormalizer(np.asarray(config.reward_mean, float),
                             np.asarray(config.reward_std, float))
    pc = copy.deepcopy(planner_config) if planner_config is not None else PlannerConfig()
    pc.straight_mode = "replay"
    pc.v_target = config.v_target
    return Planner(scenario, corridor, config.theta_star, norm, pc)


def straight_log(scenario: Scenario, speed: float, s0: float, duration: float, dt: float,
                 jitter: float, rng: np.random.Generator, vehicle_id: str) -> VehicleLog:
    """Constant-speed drive along the straight path with a mild speed random walk."""
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    v = speed + np.cumsum(np.concatenate([[0.0], rng.normal(0.0, jitter * np.sqrt(dt), n - 1)]))
    v = np.clip(v, 0.5 * speed, 1.5 * speed)
    s = s0 + np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)])
    path = scenario.straight_path
    if s[-1] > path.total_length:
        raise ValueError("straight path too short for the requested log")
    x, y, h, _, _ = path.sample(s)
    a = np.gradient(v, dt)
    return VehicleLog(vehicle_id, "straight", t, x, y, v * np.cos(h), v * np.sin(h),
                      a * np.cos(h), a * np.sin(h), h)


def left_log(traj: Trajectory, noise_std: float, rng: np.random.Generator,
             vehicle_id: str) -> VehicleLog:
    """Cartesian log of an executed plan; noise only on positions."""
    h, v, a, k = traj.heading, traj.speed, traj.accel, traj.curvature
    an = v * v * k
    ax = a * np.cos(h) - an * np.sin(h)
    ay = a * np.sin(h) + an * np.cos(h)
    noise = rng.normal(0.0, noise_std, (2, len(traj))) if noise_std > 0 else np.zeros((2, len(traj)))
    return VehicleLog(vehicle_id, "left", traj.abs_t, traj.x + noise[0], traj.y + noise[1],
                      v * np.cos(h), v * np.sin(h), ax, ay, h.copy())


def _simulate_event(planner: Planner, scenario: Scenario, cfg: SyntheticConfig,
                    decision: Decision, rng: np.random.Generator, seed: int):
    cg = scenario.conflict
    v0 = rng.uniform(*cfg.left_speed)
    l0 = rng.normal(0.0, cfg.l0_std) if cfg.l0_std > 0 else 0.0
    v_st = rng.uniform(*cfg.straight_speed)
    gap = rng.uniform(*(cfg.gap_proceed if decision is Decision.PROCEED else cfg.gap_yield))
    t_left = (cg.s_cp_left - cfg.s0) / v0
    t_arrive = max(t_left + gap, 0.5)
    s0_st = cg.s_cp_straight - v_st * t_arrive
    duration = planner.config.max_duration + cfg.straight_tail
    st_log = straight_log(scenario, v_st, s0_st, duration, cfg.frame_dt, cfg.straight_jitter,
                          rng, "straight")
    track = straight_track(st_log, scenario)
    init = FrenetState(cfg.s0, l0, v0, 0.0, 0.0, 0.0)
    mode = SelectionMode.ARGMAX if cfg.temperature == 0 else SelectionMode.SAMPLE
    ro = rolling_plan(planner, init, decision, 0.0, track, replan_dt=cfg.replan_dt, seed=seed,
                      mode=mode)
    info = {"v_left": v0, "l0": l0, "v_straight": v_st, "gap": gap, "status": ro.status,
            "fallbacks": ro.n_fallbacks, "plan_times": [round(float(t), 10) for t in ro.plan_times]}
    return ro, st_log, info


def generate_synthetic(config: SyntheticConfig, scenario: Scenario,
                       planner_config: Optional[PlannerConfig] = None) -> SyntheticDataset:
    """Generate events with per-event seeds spawned from ``config.seed``.

    Events whose rollout needed the emergency stop profile are redrawn (up to
    ``max_attempts``); the manifest records the attempt count.
    """
    planner = truth_planner(scenario, config, planner_config)
    if config.temperature > 0:
        planner.config.temperature = config.temperature
    children = np.random.SeedSequence(config.seed).spawn(config.n_events)
    rows, events_meta = [], {}
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        eid = f"e{k:04d}"
        decision = Decision.PROCEED if rng.random() < config.proceed_fraction else Decision.YIELD
        for attempt in range(1, config.max_attempts + 1):
            seed = int(rng.integers(2 ** 31))
            ro, st_log, info = _simulate_event(planner, scenario, config, decision, rng, seed)
            if ro.status == "ok" and ro.n_fallbacks == 0:
                break
        t_end = float(ro.executed.abs_t[-1]) + config.straight_tail
        st_log = _truncate(st_log, t_end)
        lft = left_log(ro.executed, config.noise_std, rng, "left")
        rows += log_rows(eid, lft, config.frame_dt, decision.value)
        rows += log_rows(eid, st_log, config.frame_dt, decision.value)
        info.update(decision=decision.value, attempts=attempt, rollout_seed=seed,
                    entropy=int(child.entropy), spawn_key=list(child.spawn_key))
        events_meta[eid] = info
    manifest = {
        "seed": config.seed,
        "theta_star": config.theta_star,
        "reward_mean": list(config.reward_mean),
        "reward_std": list(config.reward_std),
        "temperature": config.temperature,
        "noise_std": config.noise_std,
        "config": config.to_dict(),
        "events": events_meta,
    }
    return SyntheticDataset(rows, manifest)


def _truncate(vlog: VehicleLog, t_end: float) -> VehicleLog:
    m = vlog.t <= t_end + 1e-9
    return VehicleLog(vlog.vehicle_id, vlog.role, vlog.t[m], vlog.x[m], vlog.y[m], vlog.vx[m],
                      vlog.vy[m], vlog.ax[m], vlog.ay[m], vlog.heading[m])
