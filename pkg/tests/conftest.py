import numpy as np
import pytest

from gmsfem_dl.gmsfem import GMsFEM
from gmsfem_dl.mesh import GridSpec, build_grid, target_region
from gmsfem_dl.permeability import EnsembleConfig, EnsembleGenerator


@pytest.fixture(scope="session")
def grid():
    return build_grid(GridSpec(10, 10))


@pytest.fixture(scope="session")
def region(grid):
    return target_region(grid, 55)


@pytest.fixture(scope="session")
def generator(grid, region):
    return EnsembleGenerator(grid, region, EnsembleConfig(n_total=24, n_train=20))


@pytest.fixture(scope="session")
def reference_fit(generator):
    return GMsFEM().fit(generator.reference())


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(GridSpec(4, 4))


def random_channel_field(grid, seed, contrast=1e3, n_channels=3):
    """Background 1 plus a few random horizontal or vertical high-permeability stripes."""
    rs = np.random.default_rng(seed)
    kappa = np.exp(rs.uniform(-0.5, 0.5, grid.n_cells))
    k2 = kappa.reshape(grid.n, grid.n)
    for _ in range(n_channels):
        i = rs.integers(1, grid.n - 1)
        if rs.random() < 0.5:
            k2[i, :] = contrast
        else:
            k2[:, i] = contrast
    return kappa


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
