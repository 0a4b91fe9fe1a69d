import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from slq import library, riccati_iterate

settings.register_profile("slq", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "slq"))

SCENARIOS = os.path.join(os.path.dirname(__file__), "..", "scenarios")


def scenario_path(name):
    return os.path.abspath(os.path.join(SCENARIOS, name))


@pytest.fixture(scope="session")
def heat():
    return library.heat_modes()


@pytest.fixture(scope="session")
def heat_solution(heat):
    return riccati_iterate(heat, keep_iterates=True)


@pytest.fixture(scope="session")
def noisy():
    return library.noisy_scalar()


@pytest.fixture(scope="session")
def noisy_solution(noisy):
    return riccati_iterate(noisy)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
