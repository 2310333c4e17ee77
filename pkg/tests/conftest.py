import numpy as np
import pytest

from tjunction.pomdp import PomdpModel

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Shared list of one-line verdicts, echoed after the run summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checks")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_transition(rng, n_actions, n_states):
    return rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))


def random_mdp(rng, n_states, n_actions, discount=0.9):
    """Random MDP wrapped as a model with a noiseless identity sensor."""
    transition = random_transition(rng, n_actions, n_states)
    observation = np.broadcast_to(np.eye(n_states), (n_actions, n_states, n_states)).copy()
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return PomdpModel(
        transition=transition,
        observation=observation,
        reward=reward,
        discount=discount,
    )


def random_pomdp(rng, n_states, n_actions, n_observations, discount=0.9):
    transition = random_transition(rng, n_actions, n_states)
    observation = rng.dirichlet(np.ones(n_observations), size=(n_actions, n_states))
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return PomdpModel(
        transition=transition,
        observation=observation,
        reward=reward,
        discount=discount,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
