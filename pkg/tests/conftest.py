import numpy as np
import pytest

from twobeam.models import DetectorParams, ResponseModel

# DET1 best-fit values of the NP model
DET1_DARK = 83.0
DET1_TAU = 36.7e-9

ACCEPTANCE_LINES = []


@pytest.fixture
def det1():
    return ResponseModel.np(DET1_DARK, DET1_TAU)


@pytest.fixture
def det1_params():
    return DetectorParams(dark_rate=DET1_DARK, dead_time_np=DET1_TAU)


@pytest.fixture
def rng():
    return np.random.default_rng(20211)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
