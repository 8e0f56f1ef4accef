import numpy as np
import pytest

from vlbirl.env import corrupt_policy, make_env, rollout
from vlbirl.policy import optimal_expert

EXPERT_SEED = 1000
N_EXPERT = 50


@pytest.fixture(scope="session")
def grid():
    return make_env("gridworld")


@pytest.fixture(scope="session")
def point():
    return make_env("pointmass")


@pytest.fixture(scope="session")
def expert(grid):
    return optimal_expert(grid)


@pytest.fixture(scope="session")
def expert_trajs(grid, expert):
    return rollout(grid, expert, N_EXPERT, seed=EXPERT_SEED)


@pytest.fixture(scope="session")
def noisy_expert(expert):
    return corrupt_policy(expert, 0.2)


@pytest.fixture(scope="session")
def noisy_trajs(grid, noisy_expert):
    return rollout(grid, noisy_expert, N_EXPERT, seed=EXPERT_SEED)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
