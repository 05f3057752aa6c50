import numpy as np
import pytest

from hetgrasp.objgen import HeterogeneousObject


def make_grid_object(occupied, mass=None, friction=0.6, cell_size=0.03, height=None, pose=(0.0, 0.0, 0.0),
                     category=0, instance=0):
    """Hand-built object; ``mass`` defaults to 1 kg spread evenly over the cells."""
    occ = np.asarray(occupied, dtype=bool)
    n = occ.sum()
    if mass is None:
        mass = np.where(occ, 1.0 / max(n, 1), 0.0)
    mass = np.asarray(mass, dtype=float)
    fr = np.where(occ, friction, 0.0) if np.isscalar(friction) else np.asarray(friction, dtype=float)
    h = np.where(occ, cell_size, 0.0) if height is None else np.asarray(height, dtype=float)
    region = np.where(occ, 0, -1)
    return HeterogeneousObject(category, instance, cell_size, occ, h, mass, fr, region, pose)


def bar(masses, friction=0.6, cell_size=0.03):
    """One-cell-thick bar along x with the given per-cube masses."""
    masses = np.asarray(masses, dtype=float)[None, :]
    return make_grid_object(np.ones_like(masses, dtype=bool), masses, friction, cell_size)


@pytest.fixture
def uniform_bar():
    return bar(np.full(10, 0.1))


@pytest.fixture
def hammer_bar():
    return bar([0.4, 0.4] + [0.025] * 8)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
