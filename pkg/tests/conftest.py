import sys

import numpy as np
import pytest

from hybridpmb import intensity as inten
from hybridpmb.gaussian import CvDynamics


@pytest.fixture(scope="session")
def grid_spec():
    return inten.GridSpec.default()


@pytest.fixture(scope="session")
def kernel(grid_spec):
    return inten.build_kernel_monte_carlo(grid_spec, CvDynamics(), survival=0.999)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "_results", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
