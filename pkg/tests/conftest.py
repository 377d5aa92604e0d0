"""Shared fixtures: desk-scale traces reused across acceptance criteria."""

import numpy as np
import pytest

import stratsample as ss


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="run the slow Brownian-dynamics cross validation")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="slow; enable with --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def polymer6_trace_2885():
    """Shared 2M-step polymer run at the reference sticky parameter."""
    model = ss.make_model("polymer6", kappa=2.885)
    return ss.run_chain(model, 2_000_000, thin=10, seed=42)


@pytest.fixture(scope="session")
def parabola_trace():
    """Run at the published parameters: 1e6 steps, every 10th recorded."""
    model = ss.make_model("parabola-line")
    return ss.run_chain(model, 1_000_000, thin=10, seed=7)


def random_feasible_states(model, n_states, stride=25, seed=0):
    out = []
    for state, _ in ss.iterate_chain(model, n_states * stride, seed=seed):
        out.append(state)
    return out[stride - 1::stride]
