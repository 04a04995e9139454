import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vpmf.grid_fields import TorusGrid

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance, printed at session end
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        passed, detail = ACCEPTANCE_LINES[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def grid2():
    return TorusGrid(2, 32)


@pytest.fixture
def grid3():
    return TorusGrid(3, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
