import numpy as np
import pytest

from smgark.systems import FpuParams, fpu_system, standard_initial_state


@pytest.fixture(scope="session")
def fpu():
    return fpu_system(FpuParams(3, 50.0))


@pytest.fixture(scope="session")
def fpu_y0():
    return standard_initial_state(FpuParams(3, 50.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(k), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:<12s} {'PASS' if ok else 'FAIL'}  {detail}")
