import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from drport.model import Instance, Moments, UncertaintySet, UtilityPWL
from drport.synthetic import random_instance

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", deadline=None, max_examples=15, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def small_instance():
    return random_instance(6, 3, 0)


@pytest.fixture
def linear_instance():
    """Single linear piece u(y) = y."""
    inst = random_instance(5, 2, 3)
    return Instance(inst.moments, inst.ambiguity, UtilityPWL((1.0,), (0.0,)), inst.gamma, inst.k)


def symmetric_instance(n, k, sigma2=1.0, c=1.0, gamma=1.0):
    from drport.model import default_utility

    moments = Moments(np.full(n, c), sigma2 * np.eye(n))
    return Instance(moments, UncertaintySet(1.0, 4.0), default_utility(moments), gamma, k)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
