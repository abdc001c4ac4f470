import math

import numpy as np
import pytest

from sparsegap.hard_design import HardDesignParams, build_hard_design

# desk-scale hard design shared by several modules
DESK = dict(m=3, t=2, n=48, d=16, l=30)


@pytest.fixture(scope="session")
def desk_params():
    return HardDesignParams(gamma_target=0.02, seed=11, **DESK)


@pytest.fixture(scope="session")
def desk_design(desk_params):
    return build_hard_design(desk_params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sqrt_n_identity(n):
    return math.sqrt(n) * np.eye(n)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
