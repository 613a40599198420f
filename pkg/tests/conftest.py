import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def pytest_collection_modifyitems(config, items):
    # keep the expensive acceptance runs last so quick failures surface first
    items.sort(key=lambda it: "test_acceptance" in it.nodeid)


@pytest.fixture
def tiny():
    from rhmlab.grammar import RhmParams, sample_instance

    return sample_instance(RhmParams(2, 2, 3, 2, seed=11))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
