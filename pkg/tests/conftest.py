import numpy as np
import pytest

from divfree_stokes import StokesSystem, coarse_lshape, coarse_square, generate_lshape, generate_square, refine_levels


@pytest.fixture(scope="session")
def square4():
    return generate_square(4)


@pytest.fixture(scope="session")
def coarse_sq():
    return coarse_square()


@pytest.fixture(scope="session")
def coarse_l():
    return coarse_lshape()


@pytest.fixture(scope="session")
def sys_square4(square4):
    return StokesSystem(square4)


@pytest.fixture(scope="session")
def sys_coarse(coarse_sq):
    return StokesSystem(coarse_sq)


@pytest.fixture(scope="session")
def sys_coarse_l(coarse_l):
    return StokesSystem(coarse_l)


@pytest.fixture(scope="session")
def sq_hierarchy(coarse_sq):
    return refine_levels(coarse_sq, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(20241015)


def all_meshes():
    """Meshes used by the property suites; includes the 448-DOF configuration."""
    return [
        generate_square(1),
        generate_square(3),
        generate_square(4),
        generate_lshape(2),
        generate_lshape(4),
        coarse_square(),
        coarse_lshape(),
        refine_levels(generate_square(2), 2)[-1],
    ]


# criterion id -> one-line PASS/FAIL summary, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
