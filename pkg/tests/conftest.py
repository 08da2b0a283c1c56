import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("fast", max_examples=8, deadline=None)
settings.register_profile("thorough", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from grushin_mfg.scenarios import resolution  # noqa: E402


def quiet(fn, *a, **kw):
    """Call fn with the A_max advisory silenced."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return fn(*a, **kw)


@pytest.fixture(scope="session")
def lqr_small():
    return quiet(resolution, "lqr", 51, 50).spec


@pytest.fixture(scope="session")
def sine_small():
    return quiet(resolution, "sine", 43, 20).spec


@pytest.fixture(scope="session")
def bench_small():
    return quiet(resolution, "benchmark", 43, 20).spec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
