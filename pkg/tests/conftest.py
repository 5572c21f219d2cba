import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qdcluster.protocol import TruthTable
from qdcluster.trion import DeviceParams

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# measured tables with their quoted 1-sigma errors; rows photon 2, columns photon 3 (R, L)
MEASURED_LINEAR = TruthTable("HV", "RL", [[0.28, 0.68], [0.72, 0.32]], [[0.11, 0.18], [0.23, 0.15]])
MEASURED_CIRCULAR = TruthTable("RL", "RL", [[0.05, 0.82], [0.95, 0.18]], [[0.04, 0.19], [0.21, 0.07]])


@pytest.fixture
def baseline():
    return DeviceParams()


@pytest.fixture
def improved():
    return DeviceParams(t_rad=0.2, t2_ground=10.0)


@pytest.fixture
def ideal():
    return DeviceParams().ideal_limit()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
