import numpy as np
import pytest

from svdkifmm.geometry import cube_points, icosphere


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sphere1280():
    return icosphere(3)


@pytest.fixture(scope="session")
def cloud2k():
    return cube_points(2048, seed=7)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
