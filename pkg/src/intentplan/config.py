"""Run configuration: YAML in, validated dataclasses out.

Unknown keys, wrong types and out-of-range values are reported with their
dotted field path (``train.learning_rate: must be > 0``).
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .constraints import KinematicBounds, VehicleFootprint
from .intent_space import SamplerConfig
from .irl import TrainConfig
from .planner import PlannerConfig
from .synthetic import SyntheticConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    frame_dt: float = 0.1
    dt: float = 0.1
    smooth_window: float = 1.0
    split_ratio: float = 0.8


@dataclass
class CorridorConfig:
    bin_width: float = 2.0
    sigma_floor: float = 0.05
    min_samples: int = 5
    percentile: float = 95.0
    # set: decision-agnostic band of this half width, no pre-turn
    flat_half_width: Optional[float] = None


@dataclass
class RewardConfig:
    # None: recorded target of a generated corpus, else the corpus mean speed
    v_target: Optional[float] = None
    eps_v: float = 0.5
    ttcp_max: float = 10.0


@dataclass
class PlanningConfig:
    mode: str = "argmax"
    temperature: float = 1.0
    straight_mode: str = "replay"
    replan_dt: Optional[float] = 0.5
    max_duration: float = 30.0
    max_fallbacks: int = 20


@dataclass
class TrainSection:
    iterations: int = 1000
    learning_rate: float = 0.05
    l2: float = 0.01
    per_decision: bool = True
    average: bool = False
    include_demo: bool = True
    segment_step: float = 0.5
    segment_source: str = "auto"


@dataclass
class EvalConfig:
    ahl_n: int = 3
    coverage_cell: float = 0.5
    coverage_pad: float = 2.0
    split: str = "test"
    plots: bool = True


@dataclass
class RunConfig:
    scenario: Optional[str] = None
    seed: int = 0
    threads: int = 1
    out: str = "out"
    data: DataConfig = field(default_factory=DataConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    bounds: KinematicBounds = field(default_factory=KinematicBounds)
    left_footprint: VehicleFootprint = field(default_factory=VehicleFootprint)
    straight_footprint: VehicleFootprint = field(default_factory=VehicleFootprint)
    corridor: CorridorConfig = field(default_factory=CorridorConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    planning: PlanningConfig = field(default_factory=PlanningConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SyntheticConfig = field(default_factory=SyntheticConfig)

    def planner_config(self, v_target: float) -> PlannerConfig:
        p = self.planning
        return PlannerConfig(
            sampler=dataclasses.replace(self.sampler), bounds=dataclasses.replace(self.bounds),
            left_footprint=dataclasses.replace(self.left_footprint),
            straight_footprint=dataclasses.replace(self.straight_footprint),
            v_target=v_target, eps_v=self.reward.eps_v, ttcp_max=self.reward.ttcp_max,
            mode=p.mode, temperature=p.temperature, straight_mode=p.straight_mode,
            replan_dt=p.replan_dt, max_duration=p.max_duration, max_fallbacks=p.max_fallbacks)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(iterations=t.iterations, learning_rate=t.learning_rate, l2=t.l2,
                           seed=self.seed, per_decision=t.per_decision, average=t.average,
                           include_demo=t.include_demo)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


# ---------------------------------------------------------------------------
# validation

_RANGES = {
    "threads": (1, None, True),
    "data.frame_dt": (0.0, None, False),
    "data.dt": (0.0, None, False),
    "data.smooth_window": (0.0, None, True),
    "data.split_ratio": (0.0, 1.0, False),
    "corridor.bin_width": (0.0, None, False),
    "corridor.sigma_floor": (0.0, None, False),
    "corridor.min_samples": (1, None, True),
    "corridor.percentile": (0.0, 100.0, True),
    "reward.v_target": (0.0, None, False),
    "reward.eps_v": (0.0, None, False),
    "reward.ttcp_max": (0.0, None, False),
    "planning.temperature": (0.0, None, False),
    "planning.replan_dt": (0.0, None, False),
    "planning.max_duration": (0.0, None, False),
    "planning.max_fallbacks": (0, None, True),
    "train.iterations": (1, None, True),
    "train.learning_rate": (0.0, None, False),
    "train.l2": (0.0, None, True),
    "train.segment_step": (0.0, None, False),
    "eval.ahl_n": (1, None, True),
    "eval.coverage_cell": (0.0, None, False),
    "eval.coverage_pad": (0.0, None, True),
    "corridor.flat_half_width": (0.0, None, False),
    "sampler.dt": (0.0, None, False),
    "sampler.T_fixed": (0.0, None, False),
    "synth.n_events": (1, None, True),
    "synth.noise_std": (0.0, None, True),
    "synth.temperature": (0.0, None, True),
    "synth.proceed_fraction": (0.0, 1.0, True),
}
_CHOICES = {
    "planning.mode": ("argmax", "sample"),
    "planning.straight_mode": ("replay", "predict"),
    "train.segment_source": ("auto", "rolling", "manifest"),
    "eval.split": ("test", "train", "all"),
}


def _check_range(path: str, value) -> None:
    if path in _CHOICES and value not in _CHOICES[path]:
        raise ConfigError(f"{path}: must be one of {list(_CHOICES[path])}, got {value!r}")
    if path not in _RANGES or value is None:
        return
    lo, hi, inclusive = _RANGES[path]
    if lo is not None and (value < lo if inclusive else value <= lo):
        raise ConfigError(f"{path}: must be {'>=' if inclusive else '>'} {lo}, got {value!r}")
    if hi is not None and (value > hi if inclusive else value >= hi):
        raise ConfigError(f"{path}: must be {'<=' if inclusive else '<'} {hi}, got {value!r}")


def _coerce(path: str, tp, value):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(path, inner[0], value)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tp in (tuple, list) or origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value) if (tp is tuple or origin is tuple) else list(value)
    if tp is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {value!r}")
        return value
    return value


def _build(cls, data, prefix: str = ""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or '<root>'}: expected a mapping, got {data!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{prefix + '.' if prefix else ''}{key}: unknown field")
    kwargs: dict[str, Any] = {}
    for f in dataclasses.fields(cls):
        path = f"{prefix}.{f.name}" if prefix else f.name
        if f.name in data:
            kwargs[f.name] = _coerce(path, hints[f.name], data[f.name])
            if not dataclasses.is_dataclass(hints[f.name]):
                _check_range(path, kwargs[f.name])
        elif dataclasses.is_dataclass(hints[f.name]):
            kwargs[f.name] = _build(hints[f.name], {}, path)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{prefix or '<root>'}: {err}") from None


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "value") and not isinstance(obj, (int, float, str, bool)):
        return obj.value
    return obj


def config_from_dict(data: Optional[dict]) -> RunConfig:
    return _build(RunConfig, data or {})


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Read a YAML config (defaults when ``path`` is None) and apply overrides.

    ``overrides`` maps dotted paths to values, e.g. ``{"seed": 3}``.
    """
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as err:
            raise ConfigError(f"{p}: invalid YAML ({err})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    for dotted, value in (overrides or {}).items():
        node = data
        keys = dotted.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    cfg = config_from_dict(data)
    if cfg.scenario is not None and not Path(cfg.scenario).is_file():
        raise ConfigError(f"scenario: file not found: {cfg.scenario}")
    return cfg
