import numpy as np
import pytest

from confounded_ope.environments import RandomWalkParams, build_gridworld, build_random_walk, gridworld_behavior
from confounded_ope.mdp import ObservedPolicy
from confounded_ope.occupancy import population_occupancy
from confounded_ope.system import Problem

SKEWED_PI_E = np.array([[0.2, 0.8], [0.7, 0.3]])


@pytest.fixture(scope="session")
def walk():
    return build_random_walk(RandomWalkParams())


@pytest.fixture(scope="session")
def walk_occ(walk):
    mdp, pi_b = walk
    return population_occupancy(mdp, pi_b)


@pytest.fixture(scope="session")
def walk_problem(walk, walk_occ):
    mdp, _ = walk
    return Problem.build(walk_occ, ObservedPolicy.uniform(2, 2), mdp.Phi)


@pytest.fixture(scope="session")
def skewed_problem(walk, walk_occ):
    mdp, _ = walk
    return Problem.build(walk_occ, ObservedPolicy(SKEWED_PI_E), mdp.Phi)


@pytest.fixture(scope="session")
def grid():
    mdp = build_gridworld()
    return mdp, gridworld_behavior(mdp, 0.5)


def single_state_mdp():
    from confounded_ope.mdp import ConfoundedMDP

    return ConfoundedMDP(np.ones((1, 1, 1, 1, 1)), np.array([3.0]))


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
