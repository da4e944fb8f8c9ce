import numpy as np
import pytest

from rovercopter.mdp import FiniteMdp
from rovercopter.scltl import compile_text
from rovercopter.world import BeliefMap, GridWorld


@pytest.fixture
def two_cell_world():
    # x1 = cell 0 (no labels), x2 = cell 1 (a holds)
    return GridWorld.from_cells(2, 1, ("a", "b"), {(1, 0): ["a"]})


@pytest.fixture
def two_cell_beliefs(two_cell_world):
    return BeliefMap(two_cell_world, [[0.1, 0.1], [0.9, 0.2]])


@pytest.fixture
def eventually_a_fsa():
    return compile_text("F a", ["a", "b"])


@pytest.fixture
def stay_mdp():
    """Two cells, one deterministic 'stay' input."""
    return FiniteMdp([np.eye(2)], ["stay"])
