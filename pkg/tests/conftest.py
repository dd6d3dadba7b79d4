import pytest

from flatlab.surface import build_cylinder_with_funnels, build_flat_cylinder_torus, build_flat_ended_torus


@pytest.fixture(scope="session")
def torus():
    return build_flat_cylinder_torus()


@pytest.fixture(scope="session")
def ended():
    return build_flat_ended_torus()


@pytest.fixture(scope="session")
def funnels():
    return build_cylinder_with_funnels(2.0, 1.0)


@pytest.fixture(scope="session")
def presets(torus, ended, funnels):
    return [torus, ended, funnels]
