import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from progpgd import TensorSpace

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def e(i, n=2):
    v = np.zeros(n)
    v[i] = 1.0
    return v


@pytest.fixture
def space22():
    return TensorSpace((2, 2))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
