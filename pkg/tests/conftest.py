import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from calreason.policy import init_params  # noqa: E402
from calreason.synthdata import generate_dataset  # noqa: E402


@pytest.fixture(scope="session")
def small_split():
    return generate_dataset(200, seed=3, noise_level=0.15)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_params():
    return init_params(7, 0.3)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
