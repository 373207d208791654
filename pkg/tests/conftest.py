import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from phononflux import TorusGrid, build_elastic_lattice, dispersion  # noqa: E402

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def chain():
    """Elastic chain m = 1 on a 64-site ring."""
    V = build_elastic_lattice(1, 1.0)
    return V, dispersion(V, TorusGrid(1, 64))


@pytest.fixture(scope="session")
def square():
    """Elastic square lattice m = 1 on a 16 x 16 torus."""
    V = build_elastic_lattice(2, 1.0)
    return V, dispersion(V, TorusGrid(2, 16))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
