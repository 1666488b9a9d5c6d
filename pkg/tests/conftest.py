import functools
import time

import pytest

from pcaaghq.adapt import outer_curvature, outer_optimize
from pcaaghq.mcmc import run_chains
from pcaaghq.model_api import make_model


@functools.lru_cache(maxsize=None)
def mode_of(name: str):
    """(model, outer result, curvature) for a built-in model, computed once per session."""
    model = make_model(name)
    outer = outer_optimize(model)
    curv = outer_curvature(model, outer.theta_hat, mode_fit=outer.mode_fit)
    return model, outer, curv


@functools.lru_cache(maxsize=None)
def mini_elgm_chains(seed: int = 1):
    """Reference run on mini_elgm: 4 chains x 50000 iterations, with its wall time."""
    model = make_model("mini_elgm")
    start = time.perf_counter()
    chains = run_chains(model, 4, 50000, seed)
    return chains, time.perf_counter() - start


@pytest.fixture(scope="session")
def mini_mode():
    return mode_of("mini_elgm")


@pytest.fixture(scope="session")
def fig2_mode():
    return mode_of("fig2")


# acceptance criteria record one line each; printed in the terminal summary
ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
