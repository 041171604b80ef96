import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from episodic_sarsa import FeatureMatrix  # noqa: E402
from episodic_sarsa import instances  # noqa: E402


@pytest.fixture
def chain1():
    return instances.chain1()


@pytest.fixture
def one_shot():
    return instances.one_shot()


@pytest.fixture
def eye2():
    return FeatureMatrix(np.eye(2))


@pytest.fixture
def eye1():
    return FeatureMatrix(np.eye(1))


@pytest.fixture(params=list(instances.canonical_suite()))
def suite_case(request):
    spec, phi = instances.canonical_suite()[request.param]
    return request.param, spec, phi


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
