import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from heatlab.operators import make_grid
from heatlab.weights import preset

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def abs2():
    return preset("abs2")


@pytest.fixture(scope="session")
def abs4():
    return preset("abs4")


@pytest.fixture(scope="session")
def grid32():
    return make_grid(3.0, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
