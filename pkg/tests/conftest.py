import numpy as np
import pytest

from poddiv.fespace import build_taylor_hood
from poddiv.mesh import unit_square_mesh
from poddiv.verify import desk_ensemble


@pytest.fixture(scope="session")
def space4():
    return build_taylor_hood(unit_square_mesh(4))


@pytest.fixture(scope="session")
def space8():
    return build_taylor_hood(unit_square_mesh(8))


@pytest.fixture(scope="session")
def desk8(space8):
    """Twenty snapshots of the desk flow on the 8x8 grid."""
    return desk_ensemble(space8, 20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
