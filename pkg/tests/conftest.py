import pytest
from hypothesis import HealthCheck, settings

from dumbolab.config import Config

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by test_acceptance.py; printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def cfg():
    return Config()


@pytest.fixture
def small_cfg():
    c = Config()
    c.pm.heap_mb = 0.0625
    c.pm.log_mb = 0.0625
    c.dumbo.marker_slots = 16
    return c
