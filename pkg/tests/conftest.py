import numpy as np
import pytest

from pclab.checks import coarse_problem
from pclab.config import FieldSemantics, GridField


@pytest.fixture
def tiny():
    """A (9, 3) problem instance: fast enough for per-component FD sweeps."""
    return coarse_problem(9, 3)


@pytest.fixture
def small():
    """A (33, 10) instance: large enough to exercise nontrivial dynamics."""
    return coarse_problem(33, 10)


def random_control(grid, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    return GridField(rng.normal(0.0, scale, (grid.n_space, grid.n_time)),
                     FieldSemantics.CONTROL)
