import numpy as np
import pytest

from ifesolve.assembly import assemble_system
from ifesolve.mesh import build_uniform_mesh_2d
from ifesolve.problems import example1, patch_problem

SQUARE = [(-1.0, 1.0), (-1.0, 1.0)]


@pytest.fixture(scope="session")
def ex1_high():
    """Example 1 with contrast (1000, 1) on M = 16."""
    spec = example1(1000.0, 1.0)
    return spec, assemble_system(build_uniform_mesh_2d(16, SQUARE), spec.levelset)


@pytest.fixture(scope="session")
def ex1_low():
    spec = example1(2.0, 1.0)
    return spec, assemble_system(build_uniform_mesh_2d(8, SQUARE), spec.levelset)


@pytest.fixture(scope="session")
def patch_system():
    spec = patch_problem()
    return spec, assemble_system(build_uniform_mesh_2d(8, spec.domain), spec.levelset)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
