import numpy as np
import pytest

from onco import ModelParams, build_grid, build_kernel, initial_drug, initial_tumor


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def coarse(params):
    """A 40-node setup that runs the full horizon in well under a second."""
    grid = build_grid(params, 40)
    return grid, build_kernel(grid, params.sigma), initial_tumor(grid), initial_drug(grid)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
