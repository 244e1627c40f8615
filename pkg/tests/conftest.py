import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sdpse.experiments import case_context
from sdpse.measurement import generate_true_measurements

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile("thorough", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def ctx14():
    return case_context("ieee14")


@pytest.fixture(scope="session")
def ctx5():
    return case_context("stand5")


@pytest.fixture(scope="session")
def full14(ctx14):
    return generate_true_measurements(ctx14.case, ctx14.truth, ctx14.adm)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_voltage(rng, n, spread=0.3):
    return (1 + spread * rng.standard_normal(n)) * np.exp(1j * rng.uniform(-np.pi, np.pi, n))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
