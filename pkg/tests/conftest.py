import numpy as np
import pytest

from darcylab.geometry import DomainSpec, ReferenceShape, build_lattice
from darcylab.grid import GridSpec, Mask


@pytest.fixture(scope="session")
def unit_box():
    return DomainSpec.cube(1.0)


@pytest.fixture(scope="session")
def small_grid(unit_box):
    return GridSpec.cover(unit_box, 16)


@pytest.fixture(scope="session")
def small_mask(small_grid):
    return Mask.all_fluid(small_grid)


@pytest.fixture(scope="session")
def perforated_case():
    """A small perforated box with a handful of particles."""
    box = DomainSpec.cube(1.5)
    shape = ReferenceShape.sphere(0.8)
    lat = build_lattice(box, 0.25, 1.5, shape)
    grid = GridSpec.cover(box, 36)
    mask = Mask.from_lattice(lat, grid)
    return lat, grid, mask


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)
