import sys

import pytest
from hypothesis import HealthCheck, settings

from fabtee.network import Network, NetworkSettings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def net():
    """Three peers, five clients, per-chaincode encryption, fully bootstrapped."""
    return Network(NetworkSettings(seed=7)).setup()


@pytest.fixture
def native_net():
    return Network(NetworkSettings(seed=7, mode="native")).setup()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
