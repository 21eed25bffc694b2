import numpy as np
import pytest

from spiralfield.field_graph import DistanceCache, build_graph
from spiralfield.geometry import LinearSpec, SpiralSpec, build_linear, build_spiral


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment checks")


@pytest.fixture(scope="session")
def spiral():
    return build_spiral(SpiralSpec(0.75, 11.5))


@pytest.fixture(scope="session")
def linear_u():
    return build_linear(LinearSpec(16, 11.5, 0.75, "u_turn"))


@pytest.fixture(scope="session")
def linear_omega():
    return build_linear(LinearSpec(16, 11.5, 0.75, "omega_turn", 0.5))


@pytest.fixture(scope="session")
def spiral_graph(spiral):
    return build_graph(spiral, 0.5)


@pytest.fixture(scope="session")
def spiral_cache(spiral_graph):
    return DistanceCache(spiral_graph)


@pytest.fixture(scope="session")
def small_spiral():
    return build_spiral(SpiralSpec(1.0, 4.0))


@pytest.fixture(scope="session")
def small_graph(small_spiral):
    return build_graph(small_spiral, 0.5)


@pytest.fixture(scope="session")
def linear_graph(linear_u):
    return build_graph(linear_u, 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
