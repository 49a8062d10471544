import numpy as np
import pytest

from rnls.fields import Field2, Grid
from rnls.ground_state import phi_closed_form_1d
from rnls.spectra import discretize


@pytest.fixture(scope="session")
def grid1():
    return Grid(1, 1024, 80.0)


@pytest.fixture(scope="session")
def phi1(grid1):
    return phi_closed_form_1d(1.0, grid1)


@pytest.fixture(scope="session")
def disc1(phi1):
    return discretize(phi1)


def smooth_field(grid, rng, width=(1.0, 4.0)):
    """Random band-limited localized complex field pair."""
    comps = []
    for _ in range(2):
        r2 = sum(c**2 for c in grid.coords)
        w = rng.uniform(*width)
        shift = rng.uniform(-2, 2, size=grid.dim)
        r2s = sum((c - s) ** 2 for c, s in zip(grid.coords, shift))
        z = complex(*rng.standard_normal(2))
        comps.append(z * np.exp(-0.5 * r2s / w**2) * (1 + 0.3 * np.cos(rng.uniform(0, 2) * grid.coords[0])))
    return Field2(comps[0], comps[1], grid)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
