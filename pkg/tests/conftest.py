import numpy as np
import pytest

from odewave.kernel import PlantConfig, compute_kernels


@pytest.fixture
def worked():
    return PlantConfig.from_dict({"A": [[0.0]], "B1": [1.0], "alpha": 1.0, "beta": 1.0})


@pytest.fixture
def worked_kernels(worked):
    return compute_kernels(worked, 200)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(LINES):
            terminalreporter.write_line(LINES[num])
