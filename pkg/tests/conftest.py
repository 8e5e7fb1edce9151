import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spmedoe.config import load_preset

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def paper():
    return load_preset("paper")


@pytest.fixture(scope="session")
def companion():
    return load_preset("companion")


def stored_state(n_el=10):
    """Non-uniform reference state shared with tests/oracles/derive_values.py."""
    k = np.arange(3 * n_el)
    ce = 2000.0 + 150.0 * np.cos(np.pi * k / (3 * n_el - 1)) + (7 * k % 5)
    return np.concatenate([[30000.0, 20000.0, -1.5e6, 4.0e7], ce])


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
