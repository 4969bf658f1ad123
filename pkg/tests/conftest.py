import numpy as np
import pytest

from sparsebump.lattice import ROOT, Cube, WeightedModel
from sparsebump.sparse import SparseFamily

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def worked_model():
    """depth 1, sigma = (3, 1), w = (1, 1)."""
    return WeightedModel(1, [1.0, 1.0], [3.0, 1.0])


@pytest.fixture
def chain_family():
    """{[0,1), [0,1/2)} at depth 1."""
    return SparseFamily([ROOT, Cube(1, 0)], 1)


@pytest.fixture
def unit_model():
    return WeightedModel.constant(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
