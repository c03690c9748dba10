"""Command-line entry point: synth | fit | train | plan | simulate | eval.

Every command takes ``--config``, ``--seed``, ``--out`` and ``--threads``;
``--set key=value`` overrides any config field by its dotted path. All files
are written atomically and each output directory receives the effective
configuration. Exit codes: 0 ok, 1 usage or configuration error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import plotting
from .artifacts import write_csv, write_json, write_text, write_with
from .config import ConfigError, RunConfig, load_config
from .data import DataError, load_events, split_dataset, write_event_rows
from .features import FEATURE_NAMES
from .geometry import FrenetState
from .intent_space import CorridorModel, Decision
from .irl import IrlModel, feature_expectation_gap, write_training_csv
from .pipeline import (fit_corridor_from_events, fit_model, reward_v_target, run_evaluation,
                       simulate_events)
from .planner import Planner
from .scenario import Scenario, default_scenario

log = logging.getLogger("intentplan")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
METRIC_KEYS = ("s_sl", "s_sl_upstream", "travel_time", "pet")
PER_EVENT_COLUMNS = ("event_id", "decision", "status", "fallbacks",
                     *(f"plan_{k}" for k in METRIC_KEYS), *(f"real_{k}" for k in METRIC_KEYS),
                     "terminal_in", "terminal_n", "pointwise_fraction")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared helpers


def _input(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(_input(path, what).read_text())
    except json.JSONDecodeError as err:
        raise UsageError(f"{what} {path}: invalid JSON ({err})") from None


def load_scenario(cfg: RunConfig) -> Scenario:
    if cfg.scenario is None:
        return default_scenario()
    text = _input(cfg.scenario, "scenario file").read_text()
    try:
        data = yaml.safe_load(text)
        return Scenario.from_dict(data)
    except (yaml.YAMLError, KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"scenario: {err}") from None


def _manifest(events_path: Path, manifest_path: Optional[str]) -> Optional[dict]:
    if manifest_path:
        return _read_json(manifest_path, "manifest")
    sibling = events_path.with_name("manifest.json")
    return json.loads(sibling.read_text()) if sibling.is_file() else None


def _events(cfg: RunConfig, scenario: Scenario, args):
    path = _input(args.events, "events file")
    manifest = _manifest(path, args.manifest)
    res = load_events(path, scenario, cfg.data.frame_dt, cfg.data.dt, manifest,
                      cfg.data.smooth_window)
    for w in res.warnings:
        log.warning(w)
    return res.events, manifest


def _split(events, cfg: RunConfig, which: str):
    if which == "all":
        return list(events)
    train, test = split_dataset(events, cfg.data.split_ratio, cfg.seed)
    return train if which == "train" else test


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "effective_config.yaml", cfg.dump())
    return out


def _model(path) -> IrlModel:
    try:
        return IrlModel.from_dict(_read_json(path, "model file"))
    except (KeyError, TypeError, ValueError) as err:
        raise UsageError(f"model file {path}: {err}") from None


def _planner_config(cfg: RunConfig, model: IrlModel):
    """Run config with the reward target the model was trained against."""
    v_target = cfg.reward.v_target
    if v_target is None:
        v_target = model.config.get("planner", {}).get("v_target")
    if v_target is None:
        raise UsageError("model records no v_target; set reward.v_target")
    return cfg.planner_config(float(v_target))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    from .synthetic import generate_synthetic

    scenario = load_scenario(cfg)
    synth = dataclasses.replace(cfg.synth, seed=cfg.seed)
    ds = generate_synthetic(synth, scenario, cfg.planner_config(synth.v_target))
    out = _out(cfg)
    write_with(out / "events.csv", lambda tmp: write_event_rows(tmp, ds.rows))
    write_json(out / "manifest.json", ds.manifest)
    redraws = sum(m["attempts"] > 1 for m in ds.manifest["events"].values())
    log.info("wrote %d events to %s (%d redrawn)", synth.n_events, out, redraws)
    return EXIT_OK


def cmd_fit(cfg: RunConfig, args) -> int:
    scenario = load_scenario(cfg)
    events, _ = _events(cfg, scenario, args)
    train = _split(events, cfg, "train")
    c = cfg.corridor
    if c.flat_half_width is not None:
        corridor = CorridorModel.flat(c.flat_half_width, (scenario.stop_line_s, scenario.s_end))
    else:
        corridor = fit_corridor_from_events(train, scenario, c.bin_width, c.sigma_floor,
                                            c.min_samples, c.percentile)
    out = _out(cfg)
    write_json(out / "corridor.json", {"seed": cfg.seed, "n_events": len(train),
                                       "corridor": corridor.to_dict()})
    log.info("corridor fitted on %d events", len(train))
    return EXIT_OK


def _corridor_file(path) -> CorridorModel:
    d = _read_json(path, "corridor file")
    try:
        return CorridorModel.from_dict(d.get("corridor", d))
    except (KeyError, TypeError, ValueError) as err:
        raise UsageError(f"corridor file {path}: {err}") from None


def cmd_train(cfg: RunConfig, args) -> int:
    scenario = load_scenario(cfg)
    corridor = _corridor_file(args.corridor)
    events, manifest = _events(cfg, scenario, args)
    train = _split(events, cfg, "train")
    v_target = cfg.reward.v_target
    if v_target is None:
        v_target = reward_v_target(train, scenario, manifest)
    pc = cfg.planner_config(v_target)
    t = cfg.train
    model, demos = fit_model(train, scenario, pc, cfg.train_config(), corridor,
                             t.segment_step, t.segment_source, cfg.seed, cfg.corridor.bin_width)
    summary = {"seed": cfg.seed, "n_events": len(train), "n_windows": len(demos), "groups": {}}
    for key, res in sorted(model.history.items()):
        sub = demos if key == "pooled" else [d for d in demos if d.decision == key]
        gap = feature_expectation_gap(res.theta, sub, model.normalizer, t.include_demo)
        ll = np.asarray(res.log_likelihood)
        summary["groups"][key] = {
            "n_windows": len(sub), "theta": res.theta,
            "final_objective": res.final_log_likelihood, "final_grad_norm": res.final_grad_norm,
            "nondecreasing_fraction": float(np.mean(np.diff(ll) >= 0)) if ll.size > 1 else 1.0,
            "feature_gap": dict(zip(FEATURE_NAMES, gap["relative_gap"].tolist())),
        }
    out = _out(cfg)
    write_text(out / "model.json", model.to_json() + "\n")
    write_with(out / "training_log.csv", lambda tmp: write_training_csv(tmp, model))
    write_json(out / "training_summary.json", summary)
    if cfg.eval.plots:
        plotting.plot_training(out / "training.png", model)
    log.info("trained on %d windows from %d events", len(demos), len(train))
    return EXIT_OK


def _parse_state(text: str) -> FrenetState:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--state: expected comma-separated numbers, got {text!r}") from None
    if not 2 <= len(vals) <= 6 or not np.all(np.isfinite(vals)):
        raise UsageError("--state takes 2 to 6 finite values: s,l[,v_s,v_l,a_s,a_l]")
    return FrenetState(*vals)


def cmd_plan(cfg: RunConfig, args) -> int:
    scenario = load_scenario(cfg)
    model = _model(args.model)
    state = _parse_state(args.state)
    try:
        decision = Decision.parse(args.decision)
    except ValueError as err:
        raise UsageError(str(err)) from None
    straight = None
    if args.events:
        events, _ = _events(cfg, scenario, args)
        match = [ev for ev in events if ev.event_id == args.event_id]
        if not match:
            raise UsageError(f"event {args.event_id!r} not in {args.events}")
        straight = match[0].straight
    planner = Planner.from_model(scenario, model, _planner_config(cfg, model))
    res = planner.plan_once(state, decision, args.t0, straight,
                            rng=np.random.default_rng(cfg.seed))
    doc = {k: v for k, v in res.to_dict(include_candidates=False).items() if k != "timing_ms"}
    doc.update(seed=cfg.seed, state=list(state.as_tuple()), t0=args.t0,
               n_candidates=len(res.rewards))
    out = _out(cfg)
    write_json(out / "plan.json", doc)
    term = res.batch.terminals
    keys = sorted(term)
    header = ["candidate_id", *keys, *FEATURE_NAMES, *(f"{n}_norm" for n in FEATURE_NAMES),
              "reward", "prob"]
    rows = [[i, *(float(np.asarray(term[k])[i]) for k in keys),
             *map(float, res.raw_features[i]), *map(float, res.features[i]),
             float(res.rewards[i]), float(res.probs[i])] for i in range(len(res.rewards))]
    write_csv(out / "candidates.csv", header, rows)
    write_with(out / "plan_trajectory.csv", res.chosen.to_csv)
    log.info("%s plan: candidate %d of %d", res.region.value, res.chosen_index, len(res.rewards))
    return EXIT_OK


def _write_executed(out: Path, outcomes) -> None:
    for oc in outcomes:
        if oc.rollout is not None:
            write_with(out / "executed" / f"{oc.event_id}.csv", oc.rollout.executed.to_csv)


def _rollout_rows(outcomes):
    return [[oc.event_id, oc.decision, oc.rollout.status if oc.rollout else "error",
             oc.rollout.n_fallbacks if oc.rollout else "", len(oc.rollout.steps) if oc.rollout else "",
             oc.error or (oc.rollout.message if oc.rollout else "")] for oc in outcomes]


def cmd_simulate(cfg: RunConfig, args) -> int:
    scenario = load_scenario(cfg)
    model = _model(args.model)
    events, _ = _events(cfg, scenario, args)
    subset = _split(events, cfg, args.split or cfg.eval.split)
    planner = Planner.from_model(scenario, model, _planner_config(cfg, model))
    outcomes = simulate_events(planner, subset, cfg.planning.replan_dt, cfg.seed, cfg.threads)
    out = _out(cfg)
    _write_executed(out, outcomes)
    write_csv(out / "rollouts.csv", ["event_id", "decision", "status", "fallbacks", "replans",
                                     "message"], _rollout_rows(outcomes))
    failed = [oc.event_id for oc in outcomes if oc.error]
    log.info("simulated %d events (%d failed)", len(outcomes), len(failed))
    return EXIT_OK


def long_rows(report: dict, method: str = "planned") -> list:
    """(metric, method, event, value) rows; aggregate metrics use an empty event."""
    rows = []
    for r in report["per_event"]:
        for k in METRIC_KEYS:
            rows.append([k, method, r["event_id"], r[f"plan_{k}"]])
            if method == "planned":
                rows.append([k, "real", r["event_id"], r[f"real_{k}"]])
    if "coverage" in report:
        rows.append(["coverage_ratio", method, "", report["coverage"]["ratio"]])
    if "ahl" in report:
        rows.append(["ahl", method, "", report["ahl"]["value"]])
    return rows


def cmd_eval(cfg: RunConfig, args) -> int:
    scenario = load_scenario(cfg)
    model = _model(args.model)
    baseline = _model(args.baseline) if args.baseline else None
    events, _ = _events(cfg, scenario, args)
    split = args.split or cfg.eval.split
    subset = _split(events, cfg, split)
    e, t = cfg.eval, cfg.train
    kw = dict(replan_dt=cfg.planning.replan_dt, seed=cfg.seed, ahl_n=e.ahl_n,
              segment_step=t.segment_step, segment_source=t.segment_source,
              coverage_cell=e.coverage_cell, coverage_pad=e.coverage_pad, workers=cfg.threads)
    report, outcomes = run_evaluation(subset, model, scenario, _planner_config(cfg, model),
                                      return_outcomes=True, **kw)
    long = long_rows(report)
    metrics = {k: v for k, v in report.items() if k != "per_event"}
    metrics.update(seed=cfg.seed, split=split, event_ids=sorted(ev.event_id for ev in subset))
    if baseline is not None:
        b = run_evaluation(subset, baseline, scenario, _planner_config(cfg, baseline), **kw)
        metrics["baseline"] = {k: b[k] for k in ("coverage", "ahl", "errors") if k in b}
        long += [r for r in long_rows(b, "baseline") if r[2] == ""]
    out = _out(cfg)
    write_json(out / "metrics.json", metrics)
    write_csv(out / "per_event.csv", PER_EVENT_COLUMNS,
              [[r.get(c) for c in PER_EVENT_COLUMNS] for r in report["per_event"]])
    write_csv(out / "metrics_long.csv", ["metric", "method", "event", "value"], long)
    _write_executed(out, outcomes)
    if e.plots:
        _figures(out / "figures", scenario, subset, outcomes, report["per_event"], e)
    cov = report.get("coverage", {}).get("ratio")
    log.info("evaluated %d events: coverage %s, AHL %s, %d errors", len(subset), cov,
             report.get("ahl", {}).get("value"), len(report["errors"]))
    return EXIT_OK


def _figures(out: Path, scenario, events, outcomes, per_event, e) -> None:
    by_id = {oc.event_id: oc for oc in outcomes}
    events = sorted(events, key=lambda ev: ev.event_id)
    decisions = [ev.decision.value for ev in events]
    executed = [by_id[ev.event_id].rollout.executed if by_id[ev.event_id].rollout else None
                for ev in events]
    real_xy = [np.column_stack([ev.left.x, ev.left.y]) for ev in events]
    plan_xy = [None if tr is None else np.column_stack([tr.x, tr.y]) for tr in executed]
    plotting.plot_xy(out / "xy.png", scenario, real_xy, plan_xy, decisions)
    plotting.plot_sl(out / "sl_planned.png", scenario, executed, decisions, "planned")
    plotting.plot_sl(out / "sl_real.png", scenario, [ev.left for ev in events], decisions, "real")
    plotting.plot_distributions(out / "distributions.png", per_event)
    planned = [p for p in plan_xy if p is not None]
    if planned:
        plotting.plot_coverage(out / "coverage.png", planned, real_xy, e.coverage_cell,
                               e.coverage_pad)


# ---------------------------------------------------------------------------
# argument parsing


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, help="worker processes for rollouts")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field by dotted path, value parsed as YAML")
    p.add_argument("-q", "--quiet", action="store_true", help="only report warnings and errors")
    return p


def _events_args(p, required: bool = True) -> None:
    p.add_argument("--events", required=required, help="events CSV")
    p.add_argument("--manifest", help="event manifest JSON (default: manifest.json next to the events)")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="intentplan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")

    p = sub.add_parser("fit", parents=[common], help="fit the decision corridor")
    _events_args(p)

    p = sub.add_parser("train", parents=[common], help="learn reward weights")
    _events_args(p)
    p.add_argument("--corridor", required=True, help="corridor JSON from 'fit'")

    p = sub.add_parser("plan", parents=[common], help="plan once from a given state")
    p.add_argument("--model", required=True)
    p.add_argument("--state", required=True, help="s,l[,v_s,v_l,a_s,a_l] in the path frame")
    p.add_argument("--decision", required=True, choices=[d.value for d in Decision])
    p.add_argument("--t0", type=float, default=0.0, help="absolute planning time [s]")
    _events_args(p, required=False)
    p.add_argument("--event-id", help="replay the straight vehicle of this event")

    for name, helptext in (("simulate", "closed-loop rollouts against logged traffic"),
                           ("eval", "rollouts plus metrics and figures")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--model", required=True)
        _events_args(p)
        p.add_argument("--split", choices=["train", "test", "all"],
                       help="event subset (default: eval.split)")
        if name == "eval":
            p.add_argument("--baseline", help="second model evaluated for comparison")
    return parser


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "train": cmd_train, "plan": cmd_plan,
            "simulate": cmd_simulate, "eval": cmd_eval}


def _overrides(args) -> dict:
    out = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key.strip()] = yaml.safe_load(value)
        except yaml.YAMLError:
            raise UsageError(f"--set {key}: cannot parse {value!r}") from None
    for flag in ("seed", "out", "threads"):
        if getattr(args, flag) is not None:
            out[flag] = getattr(args, flag)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    if args.command == "plan" and args.events and not args.event_id:
        parser.error("--events with plan needs --event-id")
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError) as err:
        log.error("%s", err)
        return EXIT_USAGE
    except (DataError, Exception) as err:  # noqa: BLE001 - map every failure to an exit code
        log.error("%s: %s", type(err).__name__, err)
        log.debug("traceback", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
