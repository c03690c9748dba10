"""Generate, filter, score and select candidate trajectories.

``Planner.plan_once`` handles one planning cycle; ``rolling_plan`` replays
an interaction event, replanning from the executed state.
"""

from __future__ import annotations

import enum
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .constraints import KinematicBounds, VehicleFootprint, filter_candidates
from .features import FeatureNormalizer, RewardContext, compute_features_batch
from .geometry import FrenetState, frenet_to_cartesian_arrays
from .intent_space import (CorridorModel, Decision, Region, SamplerConfig, SamplingError,
                           intersection_terminal_arrays, preturn_terminal_arrays)
from .irl import boltzmann_probs
from .scenario import Scenario
from .trajectory import (CandidateBatch, Track, Trajectory, evaluate_batch, poly_derivatives,
                         solve_quintic)


class SelectionMode(str, enum.Enum):
    ARGMAX = "argmax"
    SAMPLE = "sample"


class NoCandidatesError(RuntimeError):
    def __init__(self, counts: dict):
        super().__init__(f"all candidates rejected: {counts}")
        self.counts = counts


@dataclass
class PlannerConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    bounds: KinematicBounds = field(default_factory=KinematicBounds)
    left_footprint: VehicleFootprint = field(default_factory=VehicleFootprint)
    straight_footprint: VehicleFootprint = field(default_factory=VehicleFootprint)
    v_target: float = 8.0
    eps_v: float = 0.5
    ttcp_max: float = 10.0
    mode: SelectionMode = SelectionMode.ARGMAX
    temperature: float = 1.0
    straight_mode: str = "replay"
    replan_dt: Optional[float] = 0.5
    max_duration: float = 30.0
    max_fallbacks: int = 20

    def __post_init__(self):
        self.mode = SelectionMode(self.mode)
        if self.mode is SelectionMode.SAMPLE and not self.temperature > 0:
            raise ValueError("temperature must be positive when sampling")
        if self.straight_mode not in ("replay", "predict"):
            raise ValueError("straight_mode must be 'replay' or 'predict'")

    @property
    def dt(self) -> float:
        return self.sampler.dt

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        d = dict(d)
        kw = {}
        if "sampler" in d:
            kw["sampler"] = SamplerConfig(**d.pop("sampler"))
        if "bounds" in d:
            kw["bounds"] = KinematicBounds(**d.pop("bounds"))
        for k in ("left_footprint", "straight_footprint"):
            if k in d:
                kw[k] = VehicleFootprint(**d.pop(k))
        return cls(**kw, **d)


@dataclass
class PlanResult:
    chosen: Trajectory
    chosen_index: int
    region: Region
    decision: Decision
    batch: Optional[CandidateBatch]
    raw_features: np.ndarray
    features: np.ndarray
    rewards: np.ndarray
    probs: np.ndarray
    counts: dict
    timing: dict
    fallback: bool = False

    def to_dict(self, include_candidates: bool = True) -> dict:
        out = {
            "region": self.region.value,
            "decision": self.decision.value,
            "chosen_index": self.chosen_index,
            "fallback": self.fallback,
            "counts": self.counts,
            "timing_ms": self.timing,
            "chosen": {"t0": self.chosen.t0, "rows": self.chosen.to_rows()},
        }
        if include_candidates and self.batch is not None:
            term = self.batch.terminals
            out["candidates"] = [
                {"id": i, **{k: float(np.asarray(term[k])[i]) for k in sorted(term)},
                 "raw_features": self.raw_features[i].tolist(),
                 "features": self.features[i].tolist(),
                 "reward": float(self.rewards[i]), "prob": float(self.probs[i])}
                for i in range(len(self.batch))
            ]
        return out


def stop_profile(state: FrenetState, scenario: Scenario, config: PlannerConfig,
                 t0: float = 0.0, T: Optional[float] = None) -> Trajectory:
    """Straight-line braking at the deceleration limit, lateral motion damped."""
    dt = config.dt
    T = config.sampler.T_fixed if T is None else T
    t = np.arange(int(round(T / dt)) + 1) * dt
    decel = -config.bounds.a_min if config.bounds.a_min < 0 else 4.0
    v0 = max(state.v_s, 0.0)
    t_stop = v0 / decel
    tc = np.minimum(t, t_stop)
    s = state.s + v0 * tc - 0.5 * decel * tc ** 2
    ds = np.maximum(v0 - decel * t, 0.0)
    dds = np.where(t < t_stop, -decel, 0.0)
    lat = solve_quintic((state.l, state.v_l, state.a_l),
                        (state.l + 0.5 * state.v_l * T, 0.0, 0.0), T)
    l, dl, ddl, jl = (v[0] for v in poly_derivatives(lat[None], t))
    path = scenario.left_path
    sc = np.clip(s, 0.0, path.total_length)
    cart = frenet_to_cartesian_arrays(path, sc, l, ds, dl, dds, ddl)
    return Trajectory(t=t, s=s, l=l, v_s=ds, v_l=dl, a_s=dds, a_l=ddl, x=cart["x"], y=cart["y"],
                      heading=cart["heading"], speed=cart["speed"], accel=cart["accel"],
                      jerk_s=np.zeros_like(t), jerk_l=jl, curvature=cart["curvature"], dt=dt,
                      t0=t0, meta={"fallback": True})


def select_candidate(rewards, mode: SelectionMode, temperature: float = 1.0,
                     rng: Optional[np.random.Generator] = None) -> tuple[int, np.ndarray]:
    """Index of the chosen candidate and the selection probabilities.

    Argmax takes the first maximum (lowest index wins ties) and reports the
    Boltzmann probabilities at unit temperature; Sample draws from the
    Boltzmann distribution of ``rewards / temperature``.
    """
    rewards = np.asarray(rewards, dtype=float)
    if SelectionMode(mode) is SelectionMode.ARGMAX:
        return int(np.argmax(rewards)), boltzmann_probs([1.0], rewards[:, None])
    if not temperature > 0:
        raise ValueError("temperature must be positive when sampling")
    probs = boltzmann_probs([1.0 / temperature], rewards[:, None])
    rng = rng if rng is not None else np.random.default_rng()
    return int(rng.choice(len(probs), p=probs)), probs


class Planner:
    """Planning pipeline bound to a scenario, corridor and reward weights."""

    def __init__(self, scenario: Scenario, corridor: CorridorModel, theta: dict,
                 normalizer: FeatureNormalizer, config: PlannerConfig):
        self.scenario = scenario
        self.corridor = corridor
        self.theta = {Decision.parse(k) if k != "pooled" else k: np.asarray(v, float)
                      for k, v in theta.items()}
        self.normalizer = normalizer
        self.config = config

    @classmethod
    def from_model(cls, scenario: Scenario, model, config: PlannerConfig,
                   corridor: Optional[CorridorModel] = None) -> "Planner":
        corridor = corridor or CorridorModel.from_dict(model.corridor)
        return cls(scenario, corridor, model.theta, model.normalizer, config)

    def weights(self, decision: Decision) -> np.ndarray:
        if decision in self.theta:
            return self.theta[decision]
        if "pooled" in self.theta:
            return self.theta["pooled"]
        raise KeyError(f"no weights for {decision.value}")

    def region_for(self, state: FrenetState, replan_dt: Optional[float] = None) -> Region:
        """Upstream while the stop line lies beyond the next replanning instant."""
        cfg = self.config
        if self.corridor.unconstrained:
            return Region.INTERSECTION
        look = cfg.replan_dt if replan_dt is None else replan_dt
        look = look if look is not None else 0.0
        if state.v_s <= cfg.sampler.min_speed_floor:
            return Region.INTERSECTION
        if state.s + state.v_s * look + 1e-9 < self.scenario.stop_line_s:
            return Region.UPSTREAM
        return Region.INTERSECTION

    def straight_future(self, straight: Optional[Track], t0: float, horizon: float) -> Optional[Track]:
        if straight is None or len(straight) == 0:
            return None
        if self.config.straight_mode == "replay":
            return straight
        st = straight.sample(np.array([t0]))
        if not st["inside"][0]:
            return None
        return Track.constant_velocity(self.scenario.straight_path, float(st["s"][0]),
                                       float(st["speed"][0]), t0, horizon, self.config.dt)

    def generate(self, state: FrenetState, decision: Decision, region: Region,
                 rng: np.random.Generator) -> CandidateBatch:
        cfg = self.config.sampler
        path = self.scenario.left_path
        if region is Region.UPSTREAM:
            l_max = cfg.l_stop_max if cfg.l_stop_max is not None else self.corridor.l_stop_max
            th_max = (cfg.theta_stop_max if cfg.theta_stop_max is not None
                      else self.corridor.theta_stop_max)
            term = preturn_terminal_arrays(state, self.scenario.stop_line_s, cfg, rng, decision,
                                           l_max, th_max)
            init = (state.s, state.v_s, state.a_s)
            lon = solve_quintic(init, (term["s_T"], term["v_sT"], 0.0), term["T"])
        else:
            term = intersection_terminal_arrays(state, decision, self.corridor, cfg)
            lon = term.pop("lon")
        lat = solve_quintic((state.l, state.v_l, state.a_l),
                            (term["l_T"], term["v_lT"], 0.0), term["T"])
        batch = evaluate_batch(lon, lat, term["T"], path, cfg.dt, decision.value)
        batch.terminals = {k: np.asarray(v, dtype=float) for k, v in term.items()}
        return batch

    def plan_once(self, state: FrenetState, decision, t0: float = 0.0,
                  straight: Optional[Track] = None, region: Optional[Region] = None,
                  rng: Optional[np.random.Generator] = None,
                  mode: Optional[SelectionMode] = None) -> PlanResult:
        """One generate-filter-score-select cycle from ``state`` at time ``t0``.

        Raises:
            NoCandidatesError: when every candidate is rejected.
        """
        decision = Decision.parse(decision)
        cfg = self.config
        mode = SelectionMode(mode or cfg.mode)
        rng = rng if rng is not None else np.random.default_rng(cfg.sampler.seed)
        region = region or self.region_for(state)
        tick = time.perf_counter()
        batch = self.generate(state, decision, region, rng)
        future = self.straight_future(straight, t0, cfg.sampler.T_fixed)
        filt = filter_candidates(batch, future, cfg.bounds,
                                 (cfg.left_footprint, cfg.straight_footprint), t0)
        t_gen = time.perf_counter()
        if filt.counts["survivors"] == 0:
            raise NoCandidatesError(filt.counts)
        ctx = RewardContext(cfg.v_target, self.scenario.conflict, future, cfg.eps_v, cfg.ttcp_max)
        raw = compute_features_batch(filt.batch, ctx, t0)
        z = self.normalizer(raw)
        rewards = z @ self.weights(decision)
        t_feat = time.perf_counter()
        idx, probs = select_candidate(rewards, mode, cfg.temperature, rng)
        chosen = filt.batch.trajectory(idx, t0)
        t_sel = time.perf_counter()
        timing = {"generation": 1e3 * (t_gen - tick), "features": 1e3 * (t_feat - t_gen),
                  "selection": 1e3 * (t_sel - t_feat), "total": 1e3 * (t_sel - tick)}
        return PlanResult(chosen, idx, region, decision, filt.batch, raw, z, rewards, probs,
                          filt.counts, timing)


@dataclass
class RolloutResult:
    executed: Trajectory
    steps: list
    status: str = "ok"
    message: str = ""
    plan_times: list = field(default_factory=list)

    @property
    def n_fallbacks(self) -> int:
        return sum(1 for s in self.steps if s.fallback)


def _fallback_result(planner: Planner, state: FrenetState, decision: Decision, t0: float,
                     counts: dict, region: Region) -> PlanResult:
    traj = stop_profile(state, planner.scenario, planner.config, t0)
    empty = np.zeros((0, 4))
    return PlanResult(traj, -1, region, decision, None, empty, empty, np.zeros(0), np.zeros(0),
                      counts, {"generation": 0.0, "features": 0.0, "selection": 0.0, "total": 0.0},
                      fallback=True)


def rolling_plan(planner: Planner, initial: FrenetState, decision, t_start: float,
                 straight: Optional[Track] = None, replan_dt: Optional[float] = 0.5,
                 max_duration: Optional[float] = None, seed: int = 0,
                 mode: Optional[SelectionMode] = None) -> RolloutResult:
    """Receding-horizon execution of ``plan_once``.

    Each cycle executes ``replan_dt`` seconds of the chosen trajectory (the
    whole trajectory when ``replan_dt`` is None) and replans from the reached
    state. Stops past the intersection exit or after ``max_duration``.
    """
    decision = Decision.parse(decision)
    cfg = planner.config
    dt = cfg.dt
    max_duration = cfg.max_duration if max_duration is None else max_duration
    rng = np.random.default_rng(seed)
    state, t = initial, float(t_start)
    parts, steps, plan_times = [], [], []
    fallbacks = 0
    status, message = "ok", ""
    s_end = planner.scenario.s_end
    while True:
        region = planner.region_for(state, replan_dt)
        try:
            res = planner.plan_once(state, decision, t, straight, region=region, rng=rng, mode=mode)
            fallbacks = 0
        except (NoCandidatesError, SamplingError) as err:
            counts = getattr(err, "counts", {"error": str(err)})
            res = _fallback_result(planner, state, decision, t, counts, region)
            fallbacks += 1
        steps.append(res)
        plan_times.append(t)
        traj = res.chosen
        n_avail = len(traj) - 1
        n_exec = n_avail if replan_dt is None else min(int(round(replan_dt / dt)), n_avail)
        remaining = max_duration - (t - t_start)
        n_exec = max(min(n_exec, int(round(remaining / dt))), 1)
        # stop as soon as the exit is reached inside this piece
        past = np.nonzero(traj.s[1:n_exec + 1] >= s_end)[0]
        done = past.size > 0
        if done:
            n_exec = int(past[0]) + 1
        piece = traj.slice(0, n_exec + 1)
        parts.append(piece)
        state = traj.frenet(n_exec)
        t = t + n_exec * dt
        if done:
            break
        if t - t_start >= max_duration - 1e-9:
            status, message = "timeout", f"max duration {max_duration} s reached"
            break
        if fallbacks > cfg.max_fallbacks:
            status, message = "dead_end", f"{fallbacks} consecutive empty candidate sets"
            break
    executed = Trajectory.concatenate(parts)
    executed.t0 = float(t_start)
    executed.decision = decision.value
    executed.meta = {"status": status, "fallbacks": sum(s.fallback for s in steps)}
    return RolloutResult(executed, steps, status, message, plan_times)
