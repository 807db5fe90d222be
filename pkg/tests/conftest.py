import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from trafficnet import load_example  # noqa: E402

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def example1():
    return load_example("example1")


@pytest.fixture(scope="session")
def example2():
    return load_example("example2")


@pytest.fixture(scope="session")
def freeway():
    return load_example("freeway")


def pytest_terminal_summary(terminalreporter):
    import support

    if support.ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in support.ACCEPTANCE:
            terminalreporter.write_line(line)
