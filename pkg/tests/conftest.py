import numpy as np
import pytest

from prosumer_gne import CommGraph, ScenarioInstance

ACCEPTANCE_LINES = []


@pytest.fixture
def two_prosumer():
    """Hand-solvable case: p* = (7.5, 2.5), mu_c* = 5, b* = (7.5, 2.5)."""
    return ScenarioInstance.from_arrays([-1, -1], 1, 0, [10, 0], -100, 100, CommGraph.path(2))


@pytest.fixture
def three_stage1():
    return ScenarioInstance.from_arrays(
        [-1000] * 3, [0.00075, 0.0006, 0.001], 0, [730, 365, 0], 0, 1000, CommGraph.ring(3)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
