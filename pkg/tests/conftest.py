"""Shared fixtures: tiny grids, coils and phantoms."""

import numpy as np
import pytest

from flowrecon.models import Grid
from flowrecon.phantom import PhantomConfig, build_phantom, make_coils
from flowrecon.sampling import pattern_for_acceleration


@pytest.fixture
def rng():
    """Return a seeded generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_grid():
    """An 8x8x4 grid with 3 cardiac phases and 2 coils."""
    return Grid(nx=8, ny=8, nz=4, nt=3, nc=2)


@pytest.fixture
def tiny_coils(tiny_grid):
    """Normalized coil maps on the tiny grid."""
    return make_coils(tiny_grid, tiny_grid.nc, seed=1)


@pytest.fixture
def tiny_images(tiny_grid, rng):
    """A random complex image stack on the tiny grid."""
    shape = tiny_grid.image_shape
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def tiny_mask(tiny_grid):
    """An undersampling mask of roughly R=3 on the tiny grid."""
    return pattern_for_acceleration(3.0, tiny_grid.ny, tiny_grid.nz, tiny_grid.nt, seed=0, warn=False).mask


@pytest.fixture
def small_phantom_config():
    """A 16x16x8 phantom with 4 cardiac phases and 3 coils."""
    return PhantomConfig(nx=16, ny=16, nz=8, nt=4, n_coils=3, tube_radius=3.0)


@pytest.fixture
def small_phantom(small_phantom_config):
    """The built small phantom."""
    return build_phantom(small_phantom_config)
