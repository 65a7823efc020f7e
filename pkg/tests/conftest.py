import numpy as np
import pytest

import fracpara.grid as gridmod


def plane_wave(grid, mt: int, kx: int):
    """Correctly rounded grid plane wave exp(i(k x + rho t)), via exact-rational
    phases evaluated in extended precision."""
    nt, nx = grid.time_points, grid.spatial_points
    ld = np.longdouble
    ph = ((mt * np.arange(nt)) % nt)[:, None] / ld(nt) \
        + ((kx * np.arange(nx)) % nx)[None, :] / ld(nx)
    wave = np.exp(2j * ld(np.pi) * ph.astype(ld))
    return gridmod.make_field(grid, wave.astype(np.complex128))


def supported_field(grid, rng, scale=1.0):
    """Random complex field windowed to the physical interval (-T, T)."""
    vals = rng.standard_normal(grid.field_shape) + 1j * rng.standard_normal(grid.field_shape)
    t = grid.time_coordinates()
    window = (np.abs(t) < grid.physical_half_window).astype(float)
    shape = (-1,) + (1,) * grid.spatial_dim
    return gridmod.make_field(grid, scale * vals * window.reshape(shape))


def smooth_bump(grid, x_center=np.pi, x_width=0.6):
    """Separable smooth bump supported in space-time: Gaussian times a C-infinity
    time window vanishing at +-T."""
    x = grid.spatial_coordinates()
    t = grid.time_coordinates()
    T = grid.physical_half_window
    with np.errstate(divide="ignore", over="ignore"):
        win = np.where(np.abs(t) < T,
                       np.exp(-1.0 / np.maximum(1e-300, 1.0 - (t / T) ** 2)), 0.0)
    prof = np.exp(-((x - x_center) ** 2) / x_width**2)
    if grid.spatial_dim == 1:
        vals = prof[None, :] * win[:, None]
    else:
        vals = prof[None, :, None] * prof[None, None, :] * win[:, None, None]
    return gridmod.make_field(grid, vals)


@pytest.fixture(scope="session")
def desk_grid():
    return gridmod.make_grid(1, 2 * np.pi, 64, 1.0, 4, 256)


@pytest.fixture(scope="session")
def desk_partition(desk_grid):
    return gridmod.make_partition(desk_grid, (2.0, 4.0), (0.2, 1.0), (5.0, 5.8))


@pytest.fixture(scope="session")
def small_grid():
    return gridmod.make_grid(1, 2 * np.pi, 32, 1.0, 4, 128)


@pytest.fixture(scope="session")
def small_partition(small_grid):
    return gridmod.make_partition(small_grid, (2.4, 3.6), (0.2, 1.0), (5.0, 5.8))
