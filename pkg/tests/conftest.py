import numpy as np
import pytest

from burdenlab.dynamics import CellParams, ConstraintConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_params(rng):
    return CellParams.init(4, 3, 6, rng, scale=0.5)


@pytest.fixture
def cfg():
    return ConstraintConfig()


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
