"""Maximum-entropy IRL over finite candidate sets.

Each demonstration is scored against the candidates generated from its own
initial state, which stand in for the partition function.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .features import FEATURE_NAMES, FeatureNormalizer


class IrlError(ValueError):
    pass


class DivergenceError(IrlError):
    def __init__(self, iteration: int):
        super().__init__(f"non-finite objective at iteration {iteration}")
        self.iteration = iteration


@dataclass
class DemoInstance:
    """Demo feature vector ``f`` against candidate features ``F`` (M x K).

    ``endpoint`` / ``cand_endpoints`` hold final Cartesian positions for
    human-likeness scoring.
    """

    f: np.ndarray
    F: np.ndarray
    decision: str = ""
    event_id: str = ""
    t_start: float = 0.0
    endpoint: Optional[np.ndarray] = None
    cand_endpoints: Optional[np.ndarray] = None
    region: str = ""

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        if self.F.shape[0] < 2:
            raise IrlError("a demo needs at least 2 candidates")

    def normalized(self, norm: FeatureNormalizer) -> "DemoInstance":
        return DemoInstance(norm(self.f), norm(self.F), self.decision, self.event_id,
                            self.t_start, self.endpoint, self.cand_endpoints, self.region)


@dataclass
class TrainConfig:
    iterations: int = 1000
    learning_rate: float = 0.05
    l2: float = 0.01
    seed: int = 0
    per_decision: bool = True
    average: bool = False
    include_demo: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


def boltzmann_probs(theta, F) -> np.ndarray:
    """Softmax of ``F @ theta`` with the max subtracted before exponentiation."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if not np.all(np.isfinite(F)):
        raise IrlError("non-finite candidate features")
    r = F @ np.asarray(theta, dtype=float)
    e = np.exp(r - r.max())
    return e / e.sum()


class _Stack:
    """All candidate sets concatenated for segment-wise reductions."""

    def __init__(self, demos: Sequence[DemoInstance], include_demo: bool = False):
        if not demos:
            raise IrlError("empty demo set")
        self.f = np.stack([d.f for d in demos])
        sets = [np.vstack([d.f, d.F]) if include_demo else d.F for d in demos]
        self.F = np.concatenate(sets)
        sizes = np.array([len(s) for s in sets])
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.seg = np.repeat(np.arange(len(demos)), sizes)
        self.n = len(demos)

    def evaluate(self, theta: np.ndarray):
        r = self.F @ theta
        m = np.maximum.reduceat(r, self.starts)
        e = np.exp(r - m[self.seg])
        z = np.add.reduceat(e, self.starts)
        lse = m + np.log(z)
        p = e / z[self.seg]
        expect = np.add.reduceat(p[:, None] * self.F, self.starts, axis=0)
        per_demo = self.f @ theta - lse
        return per_demo, self.f - expect


def _objective(stack: _Stack, theta, l2: float, average: bool):
    theta = np.asarray(theta, dtype=float)
    ll, g = stack.evaluate(theta)
    value = float(np.sum(ll)) - l2 * float(theta @ theta)
    grad = g.sum(axis=0) - 2.0 * l2 * theta
    if average:
        # same maximizer, step size per demonstration
        value, grad = value / stack.n, grad / stack.n
    return value, grad


def log_likelihood(theta, demos: Sequence[DemoInstance], l2: float = 0.0,
                   average: bool = False, include_demo: bool = False) -> float:
    """``sum_d [theta.f_d - log sum_i exp(theta.F_di)] - l2 |theta|^2``.

    With ``average`` the whole objective is divided by the number of demos;
    ``include_demo`` adds each demonstration to its own partition set.
    """
    return _objective(_Stack(demos, include_demo), theta, l2, average)[0]


def gradient(theta, demos: Sequence[DemoInstance], l2: float = 0.0,
             average: bool = False, include_demo: bool = False) -> np.ndarray:
    """``sum_d [f_d - E_p F_d] - 2 l2 theta``; exact derivative of the objective."""
    return _objective(_Stack(demos, include_demo), theta, l2, average)[1]


@dataclass
class TrainResult:
    theta: np.ndarray
    log_likelihood: list
    grad_norm: list
    final_log_likelihood: float
    final_grad_norm: float

    def to_dict(self) -> dict:
        return {"theta": self.theta.tolist(), "log_likelihood": self.log_likelihood,
                "grad_norm": self.grad_norm, "final_log_likelihood": self.final_log_likelihood,
                "final_grad_norm": self.final_grad_norm}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainResult":
        return cls(np.asarray(d["theta"], float), list(d["log_likelihood"]), list(d["grad_norm"]),
                   d["final_log_likelihood"], d["final_grad_norm"])


def train(demos: Sequence[DemoInstance], config: TrainConfig,
          theta0: Optional[np.ndarray] = None) -> TrainResult:
    """Fixed-step gradient ascent from ``theta0`` (zeros by default).

    History entry ``k`` is the objective and gradient norm at the iterate
    before update ``k``.
    """
    stack = _Stack(demos, config.include_demo)
    theta = np.zeros(stack.f.shape[1]) if theta0 is None else np.array(theta0, dtype=float)
    lls, norms = [], []
    for k in range(config.iterations):
        value, grad = _objective(stack, theta, config.l2, config.average)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise DivergenceError(k)
        lls.append(value)
        norms.append(float(np.linalg.norm(grad)))
        theta = theta + config.learning_rate * grad
    value, grad = _objective(stack, theta, config.l2, config.average)
    if not (np.isfinite(value) and np.all(np.isfinite(theta))):
        raise DivergenceError(config.iterations)
    return TrainResult(theta, lls, norms, value, float(np.linalg.norm(grad)))


def policy_expectation(theta, demos: Sequence[DemoInstance],
                       include_demo: bool = False) -> np.ndarray:
    """Mean over demos of the Boltzmann expectation of candidate features."""
    stack = _Stack(demos, include_demo)
    _, g = stack.evaluate(np.asarray(theta, dtype=float))
    return (stack.f - g).mean(axis=0)


def feature_expectation_gap(theta, demos_raw: Sequence[DemoInstance],
                            norm: FeatureNormalizer, include_demo: bool = False) -> dict:
    """Demo vs policy feature expectations in raw units.

    ``demos_raw`` carry unnormalized features; the policy is evaluated on
    their normalized versions.
    """
    normed = [d.normalized(norm) for d in demos_raw]
    demo = np.mean([d.f for d in demos_raw], axis=0)
    policy = policy_expectation(theta, normed, include_demo) * norm.std + norm.mean
    rel = np.abs(demo - policy) / np.maximum(np.abs(demo), 1e-12)
    return {"demo": demo, "policy": policy, "relative_gap": rel}


def top_n(theta, F, n: int) -> np.ndarray:
    """Indices of the ``n`` most probable candidates, ties to the lower index."""
    r = np.atleast_2d(F) @ np.asarray(theta, dtype=float)
    order = np.lexsort((np.arange(len(r)), -r))
    return order[:n]


def evaluate_ahl(theta_by_decision, demos: Sequence[DemoInstance], n: int = 3) -> dict:
    """Mean final displacement of the top-``n`` candidates to the human endpoint.

    ``theta_by_decision`` maps decision to weights, or is a single vector.
    Demos must be normalized with the model's statistics.
    """
    if n < 1:
        raise IrlError("n must be >= 1")
    if not demos:
        raise IrlError("no test demos")
    errs = []
    for d in demos:
        if d.F.shape[0] < n:
            raise IrlError(f"demo {d.event_id}@{d.t_start} has fewer than {n} candidates")
        theta = (theta_by_decision[d.decision] if isinstance(theta_by_decision, dict)
                 else theta_by_decision)
        idx = top_n(theta, d.F, n)
        dist = np.hypot(*(d.cand_endpoints[idx] - d.endpoint).T)
        errs.append(float(dist.mean()))
    errs = np.array(errs)
    return {"ahl": float(errs.mean()), "per_demo": errs, "n": n}


@dataclass
class IrlModel:
    theta: dict
    normalizer: FeatureNormalizer
    history: dict = field(default_factory=dict)
    corridor: Optional[dict] = None
    config: dict = field(default_factory=dict)

    def theta_for(self, decision) -> np.ndarray:
        key = getattr(decision, "value", decision)
        if key in self.theta:
            return np.asarray(self.theta[key], dtype=float)
        if "pooled" in self.theta:
            return np.asarray(self.theta["pooled"], dtype=float)
        raise IrlError(f"model has no weights for {key}")

    def to_dict(self) -> dict:
        return {
            "features": list(FEATURE_NAMES),
            "theta": {k: np.asarray(v, float).tolist() for k, v in sorted(self.theta.items())},
            "normalizer": self.normalizer.to_dict(),
            "corridor": self.corridor,
            "config": self.config,
            "history": {k: v.to_dict() if hasattr(v, "to_dict") else v
                        for k, v in sorted(self.history.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "IrlModel":
        return cls(
            theta={k: np.asarray(v, float) for k, v in d["theta"].items()},
            normalizer=FeatureNormalizer.from_dict(d["normalizer"]),
            history={k: TrainResult.from_dict(v) for k, v in d.get("history", {}).items()},
            corridor=d.get("corridor"),
            config=d.get("config", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "IrlModel":
        return cls.from_dict(json.loads(text))


def train_model(demos_raw: Sequence[DemoInstance], config: TrainConfig,
                normalizer: Optional[FeatureNormalizer] = None, corridor: Optional[dict] = None,
                extra_config: Optional[dict] = None) -> IrlModel:
    """Fit normalization (if not given) and weights per decision or pooled."""
    if not demos_raw:
        raise IrlError("empty demo set")
    if normalizer is None:
        normalizer = FeatureNormalizer.fit(np.vstack([d.F for d in demos_raw]
                                                     + [d.f[None] for d in demos_raw]))
    normed = [d.normalized(normalizer) for d in demos_raw]
    if config.per_decision:
        groups = {}
        for d in normed:
            groups.setdefault(d.decision, []).append(d)
    else:
        groups = {"pooled": normed}
    theta, history = {}, {}
    for key in sorted(groups):
        res = train(groups[key], config)
        theta[key] = res.theta
        history[key] = res
    cfg = {"train": asdict(config)}
    cfg.update(extra_config or {})
    return IrlModel(theta, normalizer, history, corridor, cfg)


def write_training_csv(path, model: IrlModel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "iter", "log_likelihood", "grad_norm"])
        for key, res in sorted(model.history.items()):
            for i, (ll, gn) in enumerate(zip(res.log_likelihood, res.grad_norm)):
                w.writerow([key, i, repr(ll), repr(gn)])
