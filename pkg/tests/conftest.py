"""Shared fixtures: default scenario, a seeded synthetic corpus and a model
trained on its 80% split. Expensive objects are built once per session."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from intentplan.data import split_dataset
from intentplan.geometry import build_reference_path
from intentplan.irl import TrainConfig
from intentplan.pipeline import fit_model, reward_v_target, run_evaluation
from intentplan.planner import PlannerConfig
from intentplan.scenario import default_scenario
from intentplan.synthetic import SyntheticConfig, generate_synthetic

SMOOTH_WINDOW = 1.0

# criterion number -> (title, passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE[number] = (title, bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture
def straight_path():
    return build_reference_path([(0.0, 0.0), (100.0, 0.0)], 0.5, "x-axis")


@pytest.fixture(scope="session")
def corpus(scenario):
    """100 events from the default generator (seed 0, noise 0.1 m)."""
    return generate_synthetic(SyntheticConfig(n_events=100, seed=0), scenario)


@pytest.fixture(scope="session")
def corpus_events(corpus, scenario):
    return corpus.events(scenario, smooth_window=SMOOTH_WINDOW)


@pytest.fixture(scope="session")
def corpus_split(corpus_events):
    return split_dataset(corpus_events, 0.8, 0)


@pytest.fixture(scope="session")
def planner_config(corpus, corpus_split, scenario):
    return PlannerConfig(v_target=reward_v_target(corpus_split[0], scenario, corpus.manifest))


@pytest.fixture(scope="session")
def trained(corpus_split, scenario, planner_config):
    """``(model, raw demos)`` trained with the default hyperparameters."""
    return fit_model(corpus_split[0], scenario, planner_config, TrainConfig())


@pytest.fixture(scope="session")
def evaluation(trained, corpus_split, scenario, planner_config):
    report, outcomes = run_evaluation(corpus_split[1], trained[0], scenario, planner_config,
                                      return_outcomes=True)
    return report, outcomes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def replace(obj, **kw):
    return dataclasses.replace(obj, **kw)
