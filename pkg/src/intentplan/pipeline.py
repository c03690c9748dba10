"""End-to-end workflow: corridor fitting, demo construction, training,
rollouts and the evaluation report."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .features import FeatureNormalizer, RewardContext, compute_features, compute_features_batch
from .constraints import filter_candidates
from .intent_space import (CorridorModel, Decision, Region, SamplingError, fit_corridor,
                           fit_preturn_limits)
from .irl import DemoInstance, IrlModel, TrainConfig, evaluate_ahl, train_model
from .metrics import (MetricError, conflict_zone, metric_coverage, metric_pet, metric_sl_offset,
                      metric_travel_time, summary)
from .planner import Planner, PlannerConfig, RolloutResult, rolling_plan
from .scenario import Scenario
from .trajectory import Trajectory

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# corridor


def _interp_at(traj: Trajectory, s_target: float):
    """Lateral offset and heading ratio where ``traj`` crosses ``s_target``."""
    s = traj.s
    idx = np.nonzero(s >= s_target)[0]
    if idx.size == 0 or idx[0] == 0:
        return None
    j = idx[0]
    w = (s_target - s[j - 1]) / (s[j] - s[j - 1])
    l = traj.l[j - 1] + w * (traj.l[j] - traj.l[j - 1])
    ratio = np.interp(w, [0, 1], [traj.v_l[j - 1] / max(traj.v_s[j - 1], 1e-6),
                                  traj.v_l[j] / max(traj.v_s[j], 1e-6)])
    return float(l), float(ratio)


def fit_corridor_from_events(events: Sequence, scenario: Scenario, bin_width: float = 2.0,
                             sigma_floor: float = 0.05, min_samples: int = 5,
                             percentile: float = 95.0) -> CorridorModel:
    """Per-decision corridor over the intersection span plus pre-turn limits."""
    lo, hi = scenario.stop_line_s, scenario.s_end
    groups: dict = {}
    stop_states = []
    for ev in events:
        tr = ev.left
        m = (tr.s >= lo) & (tr.s <= hi)
        if m.sum() >= 2:
            groups.setdefault(ev.decision, []).append((tr.s[m], tr.l[m]))
        if ev.decision is Decision.PROCEED:
            st = _interp_at(tr, scenario.stop_line_s)
            if st is not None:
                stop_states.append(st)
    model = fit_corridor(groups, bin_width, (lo, hi), sigma_floor, min_samples)
    model.l_stop_max, model.theta_stop_max = fit_preturn_limits(stop_states, percentile)
    return model


def reward_v_target(events: Sequence, scenario: Scenario, manifest: Optional[dict] = None) -> float:
    """Target speed of a generated corpus if recorded, else the corpus mean."""
    if manifest and "v_target" in manifest.get("config", {}):
        return float(manifest["config"]["v_target"])
    return corpus_v_target(events, scenario)


def corpus_v_target(events: Sequence, scenario: Scenario) -> float:
    """Mean left-turn speed between the stop line and the intersection exit."""
    v = [ev.left.speed[(ev.left.s >= scenario.stop_line_s) & (ev.left.s <= scenario.s_exit)]
         for ev in events]
    v = np.concatenate(v) if v else np.zeros(0)
    if v.size == 0:
        raise ValueError("no samples inside the intersection")
    return float(v.mean())


# ---------------------------------------------------------------------------
# demonstrations


def onset_time(event, scenario: Scenario) -> float:
    """First left-vehicle timestamp with both vehicles near the conflict point."""
    cx, cy = scenario.conflict.point
    t = event.left.abs_t
    dl = np.hypot(event.left.x - cx, event.left.y - cy)
    st = event.straight.sample(t)
    ds = np.hypot(st["x"] - cx, st["y"] - cy)
    near = (dl <= scenario.onset_radius) & (ds <= scenario.onset_radius) & st["inside"]
    if not near.any():
        raise ValueError(f"event {event.event_id}: vehicles never both within "
                         f"{scenario.onset_radius} m of the conflict point")
    return float(t[int(np.argmax(near))])


def segment_starts(event, scenario: Scenario, step: float = 0.5, window: float = 5.0,
                   source: str = "auto") -> list[float]:
    """Window start times: every ``step`` from onset, or the logged plan times.

    ``source="auto"`` uses the plan times recorded in the event metadata when
    present and falls back to rolling windows otherwise. A start qualifies
    while the vehicle is short of the rollout end and enough log remains (a
    full window, or the stop-line crossing upstream).
    """
    tr = event.left
    dt = tr.dt
    if source == "auto":
        source = "manifest" if event.meta.get("plan_times") else "rolling"
    if source == "rolling":
        t_on = onset_time(event, scenario)
        cand = t_on + step * np.arange(int((tr.abs_t[-1] - t_on) / step + 1e-9) + 1)
    elif source == "manifest":
        cand = np.asarray(event.meta.get("plan_times", []), float)
    else:
        raise ValueError("source must be 'auto', 'rolling' or 'manifest'")
    out = []
    for t0 in cand:
        i = int(round((t0 - tr.t0) / dt))
        if i < 0 or i >= len(tr) - 1:
            continue
        if tr.s[i] >= scenario.s_end:
            break
        if tr.s[i] < scenario.stop_line_s:
            if not np.any(tr.s[i:] >= scenario.stop_line_s):
                continue
        elif i + int(round(window / dt)) >= len(tr):
            continue
        out.append(float(tr.abs_t[i]))
    return out


def _demo_slice(tr: Trajectory, i: int, region: Region, scenario: Scenario, n_window: int):
    if region is Region.UPSTREAM:
        ahead = np.nonzero(tr.s[i:] >= scenario.stop_line_s)[0]
        if ahead.size == 0 or ahead[0] == 0:
            return None
        j = i + int(ahead[0])
        # sample closest to the stop line; noise can push the crossing one step late
        if j - 1 > i and abs(tr.s[j - 1] - scenario.stop_line_s) < abs(tr.s[j] - scenario.stop_line_s):
            j -= 1
    else:
        j = i + n_window
        if j >= len(tr):
            return None
    piece = tr.slice(i, j + 1)
    piece.t0 = float(tr.abs_t[i])
    piece.t = piece.t - piece.t[0]
    return piece


def build_demo(planner: Planner, event, t_start: float, rng: np.random.Generator,
               min_candidates: int = 2) -> Optional[DemoInstance]:
    """Raw-feature demo for the window of ``event`` starting at ``t_start``."""
    tr = event.left
    cfg = planner.config
    i = int(round((t_start - tr.t0) / tr.dt))
    state = tr.frenet(i)
    region = planner.region_for(state)
    try:
        batch = planner.generate(state, event.decision, region, rng)
    except SamplingError:
        return None
    future = planner.straight_future(event.straight, t_start, cfg.sampler.T_fixed)
    filt = filter_candidates(batch, future, cfg.bounds,
                             (cfg.left_footprint, cfg.straight_footprint), t_start)
    if filt.counts["survivors"] < max(min_candidates, 2):
        return None
    piece = _demo_slice(tr, i, region, planner.scenario, int(round(cfg.sampler.T_fixed / tr.dt)))
    if piece is None:
        return None
    ctx = RewardContext(cfg.v_target, planner.scenario.conflict, future, cfg.eps_v, cfg.ttcp_max)
    f = compute_features(piece, ctx).as_array()
    F = compute_features_batch(filt.batch, ctx, t_start)
    return DemoInstance(f, F, event.decision.value, event.event_id, float(t_start),
                        endpoint=np.array([piece.x[-1], piece.y[-1]]),
                        cand_endpoints=filt.batch.endpoints(), region=region.value)


def build_demos(planner: Planner, events: Sequence, step: float = 0.5, source: str = "auto",
                seed: int = 0, min_candidates: int = 2) -> list[DemoInstance]:
    demos = []
    window = planner.config.sampler.T_fixed
    for k, ev in enumerate(events):
        rng = np.random.default_rng([seed, k])
        for t0 in segment_starts(ev, planner.scenario, step, window, source):
            d = build_demo(planner, ev, t0, rng, min_candidates)
            if d is not None:
                demos.append(d)
    return demos


# ---------------------------------------------------------------------------
# training


def fit_model(train_events: Sequence, scenario: Scenario, planner_config: PlannerConfig,
              train_config: TrainConfig, corridor: Optional[CorridorModel] = None,
              step: float = 0.5, source: str = "auto", seed: int = 0,
              bin_width: float = 2.0) -> tuple[IrlModel, list[DemoInstance]]:
    """Fit the corridor (unless given), build demos and train weights."""
    corridor = corridor or fit_corridor_from_events(train_events, scenario, bin_width)
    zero = {d.value: np.zeros(4) for d in Decision}
    planner = Planner(scenario, corridor, zero, FeatureNormalizer(), planner_config)
    demos = build_demos(planner, train_events, step, source, seed)
    if not demos:
        raise ValueError("no usable demonstration windows")
    model = train_model(demos, train_config, corridor=corridor.to_dict(),
                        extra_config={"planner": planner_config.to_dict(),
                                      "segments": {"step": step, "source": source},
                                      "seed": seed})
    return model, demos


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EventOutcome:
    event_id: str
    decision: str
    rollout: Optional[RolloutResult] = None
    metrics: dict = field(default_factory=dict)
    error: Optional[str] = None


def _rollout_one(args) -> EventOutcome:
    planner, ev, replan_dt, seed = args
    try:
        ro = rolling_plan(planner, ev.left.frenet(0), ev.decision, ev.t_start, ev.straight,
                          replan_dt=replan_dt, seed=seed)
        return EventOutcome(ev.event_id, ev.decision.value, ro)
    except Exception as err:  # noqa: BLE001 - batch keeps going, error is reported
        return EventOutcome(ev.event_id, ev.decision.value, error=repr(err))


def simulate_events(planner: Planner, events: Sequence, replan_dt: Optional[float] = 0.5,
                    seed: int = 0, workers: int = 1) -> list[EventOutcome]:
    """Roll out every event; results come back in event-id order.

    Event ``k`` (in id order) uses rollout seed ``seed + k`` regardless of
    ``workers``, so parallel and serial runs agree.
    """
    ordered = sorted(events, key=lambda ev: ev.event_id)
    jobs = [(planner, ev, replan_dt, seed + k) for k, ev in enumerate(ordered)]
    if workers <= 1 or len(jobs) < 2:
        return [_rollout_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_rollout_one, jobs, chunksize=max(len(jobs) // (4 * workers), 1)))


def upstream_sl(traj: Trajectory, scenario: Scenario) -> float:
    m = traj.s <= scenario.stop_line_s
    return metric_sl_offset(traj.s[m], traj.l[m], scenario.left_path.total_length)


def corridor_membership(rollout: RolloutResult, corridor: CorridorModel, scenario: Scenario,
                        tol: float = 1e-9) -> dict:
    """Terminal and pointwise corridor membership of intersection plans."""
    term_ok, term_n = 0, 0
    for step in rollout.steps:
        if step.fallback or step.region is not Region.INTERSECTION:
            continue
        ch = step.chosen
        lo, hi = corridor.mu_sigma(step.decision, ch.s[-1])
        lo, hi = lo - 2 * hi, lo + 2 * hi
        term_n += 1
        term_ok += int(lo - tol <= ch.l[-1] <= hi + tol)
    ex = rollout.executed
    m = (ex.s >= scenario.stop_line_s) & (ex.s <= scenario.s_exit)
    if m.any():
        mu, sd = corridor.mu_sigma(ex.decision, ex.s[m])
        inside = np.abs(ex.l[m] - mu) <= 2 * sd + tol
        pt = float(inside.mean())
    else:
        pt = float("nan")
    return {"terminal_in": term_ok, "terminal_n": term_n, "pointwise_fraction": pt}


def event_metrics(traj: Trajectory, event, scenario: Scenario, planner_config: PlannerConfig,
                  zone) -> dict:
    out = {"s_sl": metric_sl_offset(traj.s, traj.l, scenario.left_path.total_length),
           "s_sl_upstream": upstream_sl(traj, scenario)}
    try:
        out["travel_time"] = metric_travel_time(traj.abs_t, traj.x, traj.y, scenario.polygon)
    except MetricError:
        out["travel_time"] = None
    try:
        out["pet"] = metric_pet(traj, event.straight, zone,
                                planner_config.left_footprint.without_margins(),
                                planner_config.straight_footprint.without_margins())
    except MetricError:
        out["pet"] = None
    return out


def run_evaluation(events: Sequence, model: IrlModel, scenario: Scenario,
                   planner_config: PlannerConfig, corridor: Optional[CorridorModel] = None,
                   replan_dt: Optional[float] = 0.5, seed: int = 0, ahl_n: int = 3,
                   segment_step: float = 0.5, segment_source: str = "auto",
                   coverage_cell: float = 0.5, coverage_pad: float = 2.0,
                   workers: int = 1, return_outcomes: bool = False):
    """Roll out every event and aggregate coverage, S_SL, travel time, PET, AHL.

    Per-event failures are collected under ``errors``; the batch continues.
    With ``return_outcomes`` the rollouts are returned too, as
    ``(report, outcomes)``.
    """
    if not events:
        raise ValueError("no events to evaluate")
    corridor = corridor or CorridorModel.from_dict(model.corridor)
    planner = Planner.from_model(scenario, model, planner_config, corridor)
    zone = conflict_zone(scenario.left_path.xy, scenario.straight_path.xy,
                         planner_config.left_footprint.width,
                         planner_config.straight_footprint.width)
    outcomes = simulate_events(planner, events, replan_dt, seed, workers)
    by_id = {ev.event_id: ev for ev in events}
    per_event, errors, planned_xy, real_xy = [], [], [], []
    for oc in outcomes:
        ev = by_id[oc.event_id]
        real = event_metrics(ev.left, ev, scenario, planner_config, zone)
        real_xy.append(np.column_stack([ev.left.x, ev.left.y]))
        if oc.error is not None:
            errors.append({"event_id": oc.event_id, "error": oc.error})
            continue
        ex = oc.rollout.executed
        planned_xy.append(np.column_stack([ex.x, ex.y]))
        plan = event_metrics(ex, ev, scenario, planner_config, zone)
        memb = corridor_membership(oc.rollout, corridor, scenario)
        if oc.rollout.status != "ok":
            errors.append({"event_id": oc.event_id, "error": oc.rollout.message})
        per_event.append({"event_id": oc.event_id, "decision": oc.decision,
                          "status": oc.rollout.status, "fallbacks": oc.rollout.n_fallbacks,
                          **{f"plan_{k}": v for k, v in plan.items()},
                          **{f"real_{k}": v for k, v in real.items()}, **memb})
    report = {"n_events": len(events), "errors": errors, "per_event": per_event}
    if planned_xy:
        report["coverage"] = metric_coverage(planned_xy, real_xy, coverage_cell,
                                             coverage_pad).to_dict()
    for key in ("s_sl", "s_sl_upstream", "travel_time", "pet"):
        report[key] = {"planned": summary([r[f"plan_{key}"] for r in per_event]),
                       "real": summary([r[f"real_{key}"] for r in per_event])}
    for d in Decision:
        rows = [r for r in per_event if r["decision"] == d.value]
        report.setdefault("s_sl_upstream_by_decision", {})[d.value] = {
            "planned": summary([r["plan_s_sl_upstream"] for r in rows]),
            "real": summary([r["real_s_sl_upstream"] for r in rows])}
    term_in = sum(r["terminal_in"] for r in per_event)
    term_n = sum(r["terminal_n"] for r in per_event)
    report["corridor_membership"] = {
        "terminal_fraction": term_in / term_n if term_n else None,
        "pointwise": summary([r["pointwise_fraction"] for r in per_event]),
    }
    demos = build_demos(planner, events, segment_step, segment_source, seed, ahl_n)
    if demos:
        thetas = {d.value: model.theta_for(d.value) for d in Decision}
        normed = [d.normalized(model.normalizer) for d in demos]
        ahl = evaluate_ahl(thetas, normed, ahl_n)
        report["ahl"] = {"n": ahl_n, "value": ahl["ahl"], "windows": len(demos),
                         "source": segment_source}
        for d in Decision:
            sub = [x for x in normed if x.decision == d.value]
            if sub:
                report["ahl"][d.value] = evaluate_ahl(thetas, sub, ahl_n)["ahl"]
    return (report, outcomes) if return_outcomes else report
