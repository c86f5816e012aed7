import numpy as np
import pytest

from demolearn import jobshop


def random_reachable_state(rng: np.random.Generator, max_depth: int = 30) -> jobshop.SchedulingState:
    """Play random legal actions from a fresh instance to reach a random state."""
    state = jobshop.generate_instance(int(rng.integers(0, 2**31)))
    depth = int(rng.integers(0, max_depth + 1))
    for _ in range(depth):
        if jobshop.is_terminal(state):
            break
        actions = jobshop.legal_actions(state)
        if not actions:
            break
        action = actions[int(rng.integers(len(actions)))]
        if action.is_wait and not any(state.is_busy(a) for a in state.agents):
            break
        state = jobshop.step(state, action)
    return state


@pytest.fixture(scope="session")
def state_rng():
    return np.random.default_rng(20240901)
