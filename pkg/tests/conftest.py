import numpy as np
import pytest

from hoflow.grid import Grid

TWO_PI = 2 * np.pi


@pytest.fixture
def grid2():
    return Grid.cube(2, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
