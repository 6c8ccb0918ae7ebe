import sys

import numpy as np
import pytest

from dfsolve.mesh import structured_rectangle

UNIT_SQUARE = {"left": "GAMMA_U", "bottom": "GAMMA_U", "top": "GAMMA_P", "right": "GAMMA_P"}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def square4():
    return structured_rectangle(4, 4, tagging=UNIT_SQUARE)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
