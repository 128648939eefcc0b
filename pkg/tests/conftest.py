import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from jumpepr.density import Grid, gaussian_density, stable_stationary_density  # noqa: E402
from jumpepr.library import EXAMPLE1_GRID, EXAMPLE2_GRID, example1_spec, example2_spec, reversible_ou_spec  # noqa: E402
from jumpepr.model import build_jump_kernel  # noqa: E402


@pytest.fixture(scope="session")
def ex1():
    spec = example1_spec()
    return spec, build_jump_kernel(spec), EXAMPLE1_GRID


@pytest.fixture(scope="session")
def ex1_gibbs():
    return gaussian_density(EXAMPLE1_GRID)


@pytest.fixture(scope="session")
def ou():
    spec = reversible_ou_spec()
    return spec, build_jump_kernel(spec), EXAMPLE1_GRID


@pytest.fixture(scope="session", params=[1.0, 1.5], ids=["alpha1", "alpha1.5"])
def ex2(request):
    spec = example2_spec(request.param)
    return spec, build_jump_kernel(spec), stable_stationary_density(request.param, EXAMPLE2_GRID)


@pytest.fixture(scope="session")
def ex2_15():
    spec = example2_spec(1.5)
    return spec, build_jump_kernel(spec), stable_stationary_density(1.5, EXAMPLE2_GRID)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_grid():
    return Grid.line(-6.0, 6.0, 121)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
