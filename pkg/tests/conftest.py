from __future__ import annotations

import os

import pytest
from hypothesis import HealthCheck, settings

from artifact.model import Exponential, ExponentialClaims, ModelParams

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
REFERENCE_CONFIG = os.path.join(ROOT, "configs", "reference.toml")

ACCEPTANCE_LINES = []


@pytest.fixture
def ref_params():
    return ModelParams(p=1.5, r=0.03, mu=0.08, sigma=0.3, c=0.05, M=2.0, T=1.0)


@pytest.fixture
def poisson():
    return Exponential(1.0)


@pytest.fixture
def exp_claims():
    return ExponentialClaims(1.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
