"""Decision-conditioned sampling spaces.

Upstream of the stop line, Proceed candidates pre-turn (lateral offset and
heading change at the stop line) while Yield candidates keep straight.
Inside the intersection, terminal lateral offsets are drawn from a per
decision corridor ``mu(s) +/- 2 sigma(s)`` fitted to demonstrations.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .geometry import FrenetState
from .trajectory import BoundaryConditions, solve_longitudinal_quartic


class Decision(str, enum.Enum):
    PROCEED = "proceed"
    YIELD = "yield"

    @classmethod
    def parse(cls, value) -> "Decision":
        if isinstance(value, Decision):
            return value
        v = str(value).strip().lower()
        aliases = {"p": "proceed", "preempt": "proceed", "proceed": "proceed",
                   "y": "yield", "yield": "yield"}
        if v not in aliases:
            raise ValueError(f"unknown decision {value!r}")
        return cls(aliases[v])


class Region(str, enum.Enum):
    UPSTREAM = "upstream"
    INTERSECTION = "intersection"


class SamplingError(ValueError):
    pass


@dataclass
class SamplerConfig:
    """Sampling grid and pre-turn controls.

    Defaults reproduce the 6 x 5 x 10 intersection grid with T = 5 s.
    ``l_stop_max``/``theta_stop_max`` of ``None`` defer to the values stored
    on the corridor model.
    """

    dv_s: float = 3.0
    n_vs: int = 6
    dv_l: float = 1.0
    n_vl: int = 5
    n_l: int = 10
    T_fixed: float = 5.0
    dT_pre: float = 1.0
    dv_pre: float = 1.0
    l_stop_max: Optional[float] = None
    theta_stop_max: Optional[float] = None
    n_pre: int = 100
    T_pre_min: float = 0.5
    min_speed_floor: float = 0.5
    dt: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("n_vs", "n_vl", "n_l", "n_pre"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("dv_s", "dv_l", "dT_pre", "dv_pre"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.T_fixed <= 0 or self.dt <= 0:
            raise ValueError("T_fixed and dt must be positive")

    @property
    def grid_size(self) -> int:
        return self.n_vs * self.n_vl * self.n_l


@dataclass
class CorridorBand:
    breakpoints: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "mu": self.mu.tolist(),
                "sigma": self.sigma.tolist(), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CorridorBand":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("breakpoints", "mu", "sigma")),
                   counts=np.asarray(d.get("counts", [0] * len(d["mu"])), dtype=int))


@dataclass
class CorridorModel:
    """Piecewise-linear lateral mean/std per decision, plus pre-turn limits."""

    bands: dict
    sigma_floor: float = 0.05
    l_stop_max: float = 0.0
    theta_stop_max: float = 0.0
    unconstrained: bool = False

    def band(self, decision) -> CorridorBand:
        d = Decision.parse(decision)
        if d not in self.bands:
            raise SamplingError(f"corridor undefined for decision {d.value}")
        return self.bands[d]

    def mu_sigma(self, decision, s):
        b = self.band(decision)
        return (np.interp(s, b.breakpoints, b.mu), np.interp(s, b.breakpoints, b.sigma))

    @property
    def s_range(self) -> tuple[float, float]:
        lo = min(float(b.breakpoints[0]) for b in self.bands.values())
        hi = max(float(b.breakpoints[-1]) for b in self.bands.values())
        return lo, hi

    @classmethod
    def flat(cls, half_width: float, s_range: tuple[float, float]) -> "CorridorModel":
        """Decision-agnostic band of +/- ``half_width`` around the reference line.

        Used as the "unconstrained sampling" baseline: no pre-turn, no
        decision-specific corridor.
        """
        bp = np.array([s_range[0], s_range[1]], dtype=float)
        band = CorridorBand(bp, np.zeros(2), np.full(2, half_width / 2.0), np.zeros(2, int))
        return cls({Decision.PROCEED: band, Decision.YIELD: band}, sigma_floor=half_width / 2.0,
                   l_stop_max=0.0, theta_stop_max=0.0, unconstrained=True)

    def to_dict(self) -> dict:
        return {
            "bands": {d.value: b.to_dict() for d, b in sorted(self.bands.items(), key=lambda kv: kv[0].value)},
            "sigma_floor": self.sigma_floor,
            "l_stop_max": self.l_stop_max,
            "theta_stop_max": self.theta_stop_max,
            "unconstrained": self.unconstrained,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorridorModel":
        return cls(
            bands={Decision.parse(k): CorridorBand.from_dict(v) for k, v in d["bands"].items()},
            sigma_floor=d.get("sigma_floor", 0.05),
            l_stop_max=d.get("l_stop_max", 0.0),
            theta_stop_max=d.get("theta_stop_max", 0.0),
            unconstrained=d.get("unconstrained", False),
        )


def corridor_bounds(model: CorridorModel, decision, s):
    """``(mu - 2 sigma, mu + 2 sigma)`` at ``s``, clamped to the fitted range."""
    mu, sigma = model.mu_sigma(decision, s)
    return mu - 2.0 * sigma, mu + 2.0 * sigma


def _bin_observations(tracks: Sequence, edges: np.ndarray) -> list[list[float]]:
    """One observation per (trajectory, bin): the mean lateral offset."""
    obs = [[] for _ in range(len(edges) - 1)]
    for s, l in tracks:
        idx = np.searchsorted(edges, s, side="right") - 1
        ok = (idx >= 0) & (idx < len(obs))
        for b in np.unique(idx[ok]):
            obs[b].append(float(np.mean(l[idx == b])))
    return obs


def _as_sl(track) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(track, "s") and hasattr(track, "l"):
        return np.asarray(track.s, float), np.asarray(track.l, float)
    s, l = track
    return np.asarray(s, float), np.asarray(l, float)


def fit_corridor(groups: Mapping, bin_width: float, s_range: Optional[tuple[float, float]] = None,
                 sigma_floor: float = 0.05, min_samples: int = 5) -> CorridorModel:
    """Fit per-decision mean/std of lateral offset over longitudinal bins.

    Args:
        groups: decision -> iterable of trajectories (objects with ``s``/``l``
            arrays, or ``(s, l)`` pairs).
        bin_width: longitudinal bin size (m).
        s_range: fitted span; defaults to the span covered by the data.
        sigma_floor: lower bound on every fitted sigma.
        min_samples: bins with fewer trajectories are merged with a neighbour.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    bands = {}
    for decision, tracks in groups.items():
        decision = Decision.parse(decision)
        tracks = [_as_sl(t) for t in tracks]
        if not tracks:
            raise SamplingError(f"no trajectories for decision {decision.value}")
        if s_range is None:
            lo = min(float(s.min()) for s, _ in tracks)
            hi = max(float(s.max()) for s, _ in tracks)
        else:
            lo, hi = s_range
        n_bins = max(int(np.ceil((hi - lo) / bin_width - 1e-9)), 1)
        edges = lo + bin_width * np.arange(n_bins + 1)
        edges[-1] = max(edges[-1], hi)
        obs = _bin_observations(tracks, edges)
        # merge under-populated bins with the smaller neighbour until all pass
        groups_ = [[i] for i in range(len(obs))]
        values = [list(o) for o in obs]
        while len(values) > 1:
            counts = [len(v) for v in values]
            weak = [i for i, c in enumerate(counts) if c < min_samples]
            if not weak:
                break
            i = weak[0]
            if i == 0:
                j = 1
            elif i == len(values) - 1:
                j = i - 1
            else:
                j = i - 1 if counts[i - 1] <= counts[i + 1] else i + 1
            a, b = min(i, j), max(i, j)
            values[a] = values[a] + values[b]
            groups_[a] = groups_[a] + groups_[b]
            del values[b], groups_[b]
        if len(values) < 2 or any(len(v) < min_samples for v in values):
            raise SamplingError(
                f"degenerate corridor span for {decision.value}: fewer than 2 bins with "
                f">= {min_samples} samples")
        centers = np.array([0.5 * (edges[g[0]] + edges[g[-1] + 1]) for g in groups_])
        mu = np.array([np.mean(v) for v in values])
        sd = np.array([np.std(v, ddof=1) if len(v) > 1 else 0.0 for v in values])
        bands[decision] = CorridorBand(centers, mu, np.maximum(sd, sigma_floor),
                                       np.array([len(v) for v in values]))
    return CorridorModel(bands, sigma_floor=sigma_floor)


def fit_preturn_limits(stopline_states: Iterable[tuple[float, float]],
                       percentile: float = 95.0) -> tuple[float, float]:
    """Pre-turn offset and heading-ratio limits at the stop line.

    ``stopline_states`` holds ``(l, v_l / v_s)`` of Proceed demonstrations
    where they cross the stop line.
    """
    arr = np.asarray(list(stopline_states), dtype=float)
    if arr.size == 0:
        return 0.0, 0.0
    return (float(np.percentile(arr[:, 0], percentile)),
            float(np.percentile(arr[:, 1], percentile)))


# ---------------------------------------------------------------------------
# terminal samplers


def _snap(T: np.ndarray, dt: float) -> np.ndarray:
    return np.maximum(np.round(T / dt), 1.0) * dt


def _between(rng: np.random.Generator, a: float, b: float, n: int) -> np.ndarray:
    if a == b:
        return np.full(n, float(a))
    return rng.uniform(min(a, b), max(a, b), n)


def preturn_terminal_arrays(state: FrenetState, s_stop: float, config: SamplerConfig,
                            rng: np.random.Generator, decision=Decision.PROCEED,
                            l_stop_max: Optional[float] = None,
                            theta_stop_max: Optional[float] = None) -> dict:
    """Vectorized upstream sampler; see :func:`sample_preturn_terminals`."""
    decision = Decision.parse(decision)
    if state.v_s <= config.min_speed_floor:
        raise SamplingError(
            f"longitudinal speed {state.v_s:.3f} below floor {config.min_speed_floor}")
    if state.s >= s_stop:
        raise SamplingError("stop line already passed")
    theta0 = state.v_l / state.v_s
    if decision is Decision.YIELD:
        l_hi, th_hi = state.l, theta0
    else:
        l_hi = state.l if l_stop_max is None else l_stop_max
        th_hi = theta0 if theta_stop_max is None else theta_stop_max
    n = config.n_pre
    # a vehicle already past a limit samples back towards it
    l_pre = _between(rng, state.l, l_hi, n)
    th_pre = _between(rng, theta0, th_hi, n)
    T_nom = (s_stop - state.s) / state.v_s
    T = rng.uniform(T_nom - config.dT_pre, T_nom + config.dT_pre, n)
    T = _snap(np.maximum(T, config.T_pre_min), config.dt)
    v0 = float(np.hypot(state.v_s, state.v_l))
    speed = np.maximum(rng.uniform(v0 - config.dv_pre, v0 + config.dv_pre, n), 0.0)
    v_s = speed / np.sqrt(1.0 + th_pre ** 2)
    v_l = th_pre * v_s
    return {"l_T": l_pre, "theta": th_pre, "v_sT": v_s, "v_lT": v_l, "T": T,
            "s_T": np.full(n, float(s_stop))}


def sample_preturn_terminals(state: FrenetState, s_stop: float, config: SamplerConfig,
                             rng: np.random.Generator, decision=Decision.PROCEED,
                             l_stop_max: Optional[float] = None,
                             theta_stop_max: Optional[float] = None) -> list[BoundaryConditions]:
    """Boundary conditions ending on the stop line.

    Proceed samples lateral offset in ``[l0, l_stop_max]`` and heading ratio
    in ``[theta0, theta_stop_max]``; Yield collapses both intervals so the
    vehicle keeps its current offset and heading. Duration is centred on the
    constant-speed arrival time and snapped to the ``dt`` grid.
    """
    arr = preturn_terminal_arrays(state, s_stop, config, rng, decision, l_stop_max, theta_stop_max)
    return [BoundaryConditions(state, l_T=float(l), v_sT=float(vs), v_lT=float(vl), T=float(T),
                               s_T=float(sT))
            for l, vs, vl, T, sT in zip(arr["l_T"], arr["v_sT"], arr["v_lT"], arr["T"], arr["s_T"])]


def intersection_terminal_arrays(state: FrenetState, decision, corridor: CorridorModel,
                                 config: SamplerConfig) -> dict:
    """Vectorized intersection grid; see :func:`sample_intersection_terminals`."""
    T = config.T_fixed
    v_s = np.maximum(np.linspace(state.v_s - config.dv_s, state.v_s + config.dv_s, config.n_vs), 0.0)
    v_l = np.linspace(state.v_l - config.dv_l, state.v_l + config.dv_l, config.n_vl)
    lon = solve_longitudinal_quartic((state.s, state.v_s, state.a_s), v_s, 0.0, T)
    s_T = lon @ (T ** np.arange(5))
    lo, hi = corridor_bounds(corridor, decision, s_T)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise SamplingError("corridor undefined at implied terminal position")
    u = np.linspace(0.0, 1.0, config.n_l) if config.n_l > 1 else np.array([0.5])
    l_grid = lo[:, None] + (hi - lo)[:, None] * u[None, :]  # (n_vs, n_l)
    VS = np.repeat(v_s, config.n_vl * config.n_l)
    ST = np.repeat(s_T, config.n_vl * config.n_l)
    VL = np.tile(np.repeat(v_l, config.n_l), config.n_vs)
    LT = np.repeat(l_grid[:, None, :], config.n_vl, axis=1).reshape(-1)
    return {"v_sT": VS, "v_lT": VL, "l_T": LT, "s_T": ST, "T": np.full(VS.shape, T),
            "lon": np.repeat(lon, config.n_vl * config.n_l, axis=0)}


def sample_intersection_terminals(state: FrenetState, decision, corridor: CorridorModel,
                                  config: SamplerConfig) -> list[BoundaryConditions]:
    """Uniform ``n_vs x n_vl x n_l`` grid of terminal states.

    ``v_sT`` spans ``v_s0 +/- dv_s`` (clipped at 0), ``v_lT`` spans
    ``v_l0 +/- dv_l`` and ``l_T`` spans the corridor band at the terminal
    position implied by the quartic longitudinal profile.
    """
    arr = intersection_terminal_arrays(state, decision, corridor, config)
    return [BoundaryConditions(state, l_T=float(l), v_sT=float(vs), v_lT=float(vl), T=float(T))
            for l, vs, vl, T in zip(arr["l_T"], arr["v_sT"], arr["v_lT"], arr["T"])]


def sampler_config_dict(config: SamplerConfig) -> dict:
    return asdict(config)
