import numpy as np
import pytest

from esnsch.forms import Family, FeSpace
from esnsch.geometry import AreaPreservingEllipsoid, StaticSphere
from esnsch.mesh import icosphere, mesh_for_surface


@pytest.fixture(scope="session")
def sphere():
    return StaticSphere()


@pytest.fixture(scope="session")
def ico2():
    return icosphere(2)


@pytest.fixture(scope="session")
def ico3():
    return icosphere(3)


@pytest.fixture(scope="session")
def ico4():
    return icosphere(4)


@pytest.fixture(scope="session")
def moving_ellipsoid():
    return AreaPreservingEllipsoid(amplitude=0.2, c0=1.0, T=1.0)


@pytest.fixture(scope="session")
def ellipsoid_mesh3(moving_ellipsoid):
    return mesh_for_surface(moving_ellipsoid, 3)


@pytest.fixture(scope="session")
def p1_3(ico3, sphere):
    return FeSpace(ico3, sphere, Family.P1_SCALAR)


@pytest.fixture(scope="session")
def p2_3(ico3, sphere):
    return FeSpace(ico3, sphere, Family.P2_SCALAR)


@pytest.fixture(scope="session")
def v2_3(ico3, sphere):
    return FeSpace(ico3, sphere, Family.P2_VECTOR)


@pytest.fixture(scope="session")
def v1_3(ico3, sphere):
    return FeSpace(ico3, sphere, Family.P1_VECTOR)


def killing_z(x):
    """Rigid rotation about the z axis, e_z x x."""
    return np.cross(np.broadcast_to([0.0, 0.0, 1.0], x.shape), x)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULT_LINES

    if RESULT_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULT_LINES):
            terminalreporter.write_line(RESULT_LINES[n])
