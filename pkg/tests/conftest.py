import numpy as np
import pytest

from amcmc.distributions import SeededRng
from amcmc.finite_chain import symmetric_two_state


@pytest.fixture
def seeded():
    return SeededRng(20240601)


@pytest.fixture
def rng(seeded):
    return seeded.generator()


@pytest.fixture
def two_state():
    """Symmetric two-state kernel with off-diagonal 0.25, so alpha = 0.5."""
    return symmetric_two_state(0.25)


def brute_variance_factor(t: int, alpha: float) -> float:
    j = np.arange(t)
    return float(np.sum((1.0 - alpha) ** np.abs(j[:, None] - j[None, :]))) / t ** 2
