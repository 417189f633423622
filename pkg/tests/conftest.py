import numpy as np
import pytest
from hypothesis import settings

from jumplab.flow import catalog
from jumplab.levy import StableLikeMeasure

settings.register_profile("jumplab", max_examples=60, deadline=None)
settings.load_profile("jumplab")

ACCEPTANCE_LINES = {}


def record_acceptance(number: int, passed: bool, detail: str) -> str:
    line = f"[acceptance {number:2d}] {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def measure():
    return StableLikeMeasure()


@pytest.fixture
def kalman():
    return catalog("kalman")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
