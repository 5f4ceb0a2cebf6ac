from __future__ import annotations

import numpy as np
import pytest

from orbitkit import fixtures as fx
from orbitkit.intertwine import build_trivialization

NORTH = np.array([0.0, 0.0, 1.0])
IDENTITY = np.eye(3).ravel()


@pytest.fixture(scope="session")
def proj_sys():
    return fx.projection()


@pytest.fixture(scope="session")
def so3_sys():
    return fx.so3_s2()


@pytest.fixture(scope="session")
def proj_triv(proj_sys):
    return build_trivialization(proj_sys, [0.0], [0.0, 0.0])


@pytest.fixture(scope="session")
def so3_triv(so3_sys):
    return build_trivialization(so3_sys, NORTH, IDENTITY, fiber_t_max=3.2)


# --- acceptance summary -------------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
