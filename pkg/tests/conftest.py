import sys

import numpy as np
import pytest

from dycalc.lattice import ScaleWindow, make_grid


def grid1(l_min=-3, l_max=0, **kw):
    return make_grid(1, ScaleWindow(l_min, l_max), **kw)


def grid2(l_min=-2, l_max=0, **kw):
    return make_grid(2, ScaleWindow(l_min, l_max), **kw)


def cube_at(grid, lo, level):
    """Cube of the given level whose lower corner is the real point lo (d=1 shortcut allowed)."""
    lo = np.atleast_1d(lo)
    idx = tuple(int(round(v / 2.0 ** level)) for v in lo)
    return grid.cube(level, idx)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
