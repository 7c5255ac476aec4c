import os

import pytest
from hypothesis import HealthCheck, settings

from rwre.env_model import EnvDistribution, Environment

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def q03():
    """Two-point law: omega = 1/4 w.p. 0.3, else 3/4."""
    return EnvDistribution.two_point(0.25, 0.75, 0.3)


@pytest.fixture
def env_q03(q03):
    return Environment(q03, 12345)


# acceptance criteria report their verdict here; printed after the run
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` so the terminal summary lists every criterion."""
    def record(number: int, title: str, passed: bool, detail: str = "", part: str = ""):
        label = f"{number} ({part})" if part else str(number)
        ACCEPTANCE_LINES[(number, part)] = f"[{'PASS' if passed else 'FAIL'}] criterion {label}: {title}  {detail}".rstrip()
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
