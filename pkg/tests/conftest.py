import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fellerstop.core import SampledFunction, StoppingProblem, make_uniform_grid, straddle_payoff
from fellerstop.generators import bm_generator

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, line = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {line}")


def straddle_problem(space, a=0.1, c1=1.0, c2=4.0, f=0.0):
    return StoppingProblem(space, a, SampledFunction.constant(space, f), straddle_payoff(space, c1, c2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def reflected_small():
    grid = make_uniform_grid(0.0, 12.0, 241)
    G = bm_generator(grid)
    return G, straddle_problem(G.space)
