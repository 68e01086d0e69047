import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from condensate.model import RateSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# lines printed in the terminal summary by the acceptance suite
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def leading1():
    return RateSpec.leading_example(1, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
