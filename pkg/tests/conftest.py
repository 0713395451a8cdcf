import numpy as np
import pytest

from multispike.mp_law import MPLaw

CS = (0.25, 0.5, 1.0, 2.0)


@pytest.fixture(params=CS, ids=lambda c: f"c={c}")
def law(request) -> MPLaw:
    return MPLaw(request.param)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
