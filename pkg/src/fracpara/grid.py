"""Space-time grids, metrics, geometry partitions, fields, and inner products.

All computations live on a spatial torus [0, L)^n (n = 1 or 2) crossed with a
padded periodic time window [-P*T, P*T).  The physical window is [-T, T]; the
padding keeps time wrap-around of nonlocal operators away from the physics.
Storage is row-major with time slowest, then spatial axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Periodic space-time grid.

    Attributes
    ----------
    spatial_dim : int
        Spatial dimension, 1 or 2.
    spatial_extent : float
        Torus edge length L; each spatial axis is [0, L).
    spatial_points : int
        Nodes per spatial axis (power of two).
    physical_half_window : float
        Half-width T of the physical time window [-T, T].
    padding_factor : float
        P >= 2; the computational window is [-P*T, P*T).
    time_points : int
        Time nodes (power of two).
    """

    spatial_dim: int
    spatial_extent: float
    spatial_points: int
    physical_half_window: float
    padding_factor: float
    time_points: int

    @property
    def h(self) -> float:
        """Spatial step L / N_x."""
        return self.spatial_extent / self.spatial_points

    @property
    def dt(self) -> float:
        """Time step 2*P*T / N_t."""
        return 2.0 * self.padding_factor * self.physical_half_window / self.time_points

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return (self.spatial_points,) * self.spatial_dim

    @property
    def field_shape(self) -> tuple[int, ...]:
        return (self.time_points,) + self.spatial_shape

    @property
    def n_samples(self) -> int:
        return self.time_points * self.spatial_points**self.spatial_dim

    @property
    def cell_volume(self) -> float:
        """dt * h^n, the space-time quadrature cell."""
        return self.dt * self.h**self.spatial_dim

    def spatial_coordinates(self) -> np.ndarray:
        """Node coordinates along one spatial axis."""
        return self.h * np.arange(self.spatial_points)

    def time_coordinates(self) -> np.ndarray:
        """Time nodes -P*T + i*dt, i = 0..N_t-1."""
        PT = self.padding_factor * self.physical_half_window
        return -PT + self.dt * np.arange(self.time_points)

    def physical_time_slice(self, open_window: bool = True) -> slice:
        """Index slice of the physical window; open (-T, T) excludes the endpoints."""
        T = self.physical_half_window
        i_lo = round((self.padding_factor - 1.0) * T / self.dt)
        i_hi = round((self.padding_factor + 1.0) * T / self.dt)
        if open_window:
            return slice(i_lo + 1, i_hi)
        return slice(i_lo, i_hi + 1)

    def time_window_mask(self, t_lo: float, t_hi: float, open_window: bool = True) -> np.ndarray:
        """Boolean mask over time nodes for the interval (t_lo, t_hi)."""
        t = self.time_coordinates()
        eps = 1e-12 * max(1.0, abs(t_hi - t_lo))
        if open_window:
            return (t > t_lo + eps) & (t < t_hi - eps)
        return (t >= t_lo - eps) & (t <= t_hi + eps)


def make_grid(
    spatial_dim: int,
    spatial_extent: float,
    spatial_points: int,
    physical_half_window: float,
    padding_factor: float,
    time_points: int,
) -> SpaceTimeGrid:
    """Build and validate a :class:`SpaceTimeGrid`.

    Raises
    ------
    ValueError
        On non-power-of-two sizes, padding_factor < 2 (wrap-around hazard),
        nonpositive extents, unsupported dimension, or a physical window
        [-T, T] that does not align with grid nodes.
    """
    if spatial_dim not in (1, 2):
        raise ValueError(f"spatial_dim must be 1 or 2, got {spatial_dim}")
    if spatial_extent <= 0 or physical_half_window <= 0:
        raise ValueError("spatial_extent and physical_half_window must be positive")
    if not _is_power_of_two(spatial_points):
        raise ValueError(f"non-power-of-two spatial_points: {spatial_points}")
    if not _is_power_of_two(time_points):
        raise ValueError(f"non-power-of-two time_points: {time_points}")
    if padding_factor < 2:
        raise ValueError(f"padding_factor must be >= 2 (wrap-around hazard), got {padding_factor}")
    grid = SpaceTimeGrid(
        spatial_dim=spatial_dim,
        spatial_extent=float(spatial_extent),
        spatial_points=int(spatial_points),
        physical_half_window=float(physical_half_window),
        padding_factor=float(padding_factor),
        time_points=int(time_points),
    )
    # [-T, T] must land on grid nodes
    ratio = physical_half_window / grid.dt
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(
            "physical window [-T, T] does not align with time nodes; "
            f"T/dt = {ratio} is not an integer"
        )
    return grid


@dataclass(frozen=True)
class MetricField:
    """Per-node Riemannian metric with its ellipticity constant.

    For spatial_dim = 1 the metric is a positive scalar per node, stored with
    shape (N_x,).  For spatial_dim = 2 it is a symmetric positive-definite
    2x2 matrix per node, stored with shape (N_x, N_x, 2, 2).  ``sqrt_det``
    holds the volume weight sqrt(|g|) per node, and ``ellipticity`` the
    largest constant lam in (0, 1] with

        lam |xi|^2 <= xi^T g(x) xi <= lam^{-1} |xi|^2   at every node.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    sqrt_det: np.ndarray
    ellipticity: float
    is_identity: bool = False

    def inverse_components(self) -> np.ndarray:
        """g^{jk} per node; shape matches ``values``."""
        if self.grid.spatial_dim == 1:
            return 1.0 / self.values
        return np.linalg.inv(self.values)


def identity_metric(grid: SpaceTimeGrid) -> MetricField:
    """Flat metric g = I with unit volume weight."""
    if grid.spatial_dim == 1:
        vals = np.ones(grid.spatial_shape)
    else:
        vals = np.zeros(grid.spatial_shape + (2, 2))
        vals[..., 0, 0] = 1.0
        vals[..., 1, 1] = 1.0
    return MetricField(
        grid=grid,
        values=_readonly(vals),
        sqrt_det=_readonly(np.ones(grid.spatial_shape)),
        ellipticity=1.0,
        is_identity=True,
    )


def metric_from_values(grid: SpaceTimeGrid, values: np.ndarray) -> MetricField:
    """Build a metric from nodal values, running the ellipticity scan.

    ``values`` has shape (N_x,) of positive scalars in 1D, or
    (N_x, N_x, 2, 2) of symmetric matrices in 2D.

    Raises
    ------
    ValueError
        If the scan finds a non-positive eigenvalue (ellipticity violation)
        or an asymmetric matrix.
    """
    values = np.asarray(values, dtype=float)
    if grid.spatial_dim == 1:
        if values.shape != grid.spatial_shape:
            raise ValueError(f"metric shape {values.shape} != {grid.spatial_shape}")
        eig_min, eig_max = values.min(), values.max()
        det = values.copy()
    else:
        if values.shape != grid.spatial_shape + (2, 2):
            raise ValueError(f"metric shape {values.shape} != {grid.spatial_shape + (2, 2)}")
        if not np.allclose(values, np.swapaxes(values, -1, -2), atol=1e-13):
            raise ValueError("metric matrices must be symmetric")
        eigs = np.linalg.eigvalsh(values)
        eig_min, eig_max = eigs.min(), eigs.max()
        det = np.linalg.det(values)
    if eig_min <= 0:
        raise ValueError(f"ellipticity violation: smallest metric eigenvalue {eig_min} <= 0")
    lam = min(eig_min, 1.0 / eig_max)
    return MetricField(
        grid=grid,
        values=_readonly(values),
        sqrt_det=_readonly(np.sqrt(det)),
        ellipticity=float(min(lam, 1.0)),
        is_identity=False,
    )


def _interval_mask(coords: np.ndarray, lo: float, hi: float, L: float) -> np.ndarray:
    """Nodes with coordinate in [lo, hi] on the circle of circumference L."""
    lo_m, hi_m = lo % L, hi % L
    if lo_m <= hi_m:
        return (coords >= lo_m - 1e-12) & (coords <= hi_m + 1e-12)
    return (coords >= lo_m - 1e-12) | (coords <= hi_m + 1e-12)


def _spec_to_mask(grid: SpaceTimeGrid, spec) -> np.ndarray:
    """Interval (1D) or box (2D) spec in torus coordinates to a node mask."""
    x = grid.spatial_coordinates()
    L = grid.spatial_extent
    if grid.spatial_dim == 1:
        lo, hi = spec
        return _interval_mask(x, float(lo), float(hi), L)
    (lo0, hi0), (lo1, hi1) = spec
    m0 = _interval_mask(x, float(lo0), float(hi0), L)
    m1 = _interval_mask(x, float(lo1), float(hi1), L)
    return m0[:, None] & m1[None, :]


def _min_periodic_distance(grid: SpaceTimeGrid, mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """Smallest torus distance between nodes of two masks."""
    x = grid.spatial_coordinates()
    L = grid.spatial_extent
    if grid.spatial_dim == 1:
        xa, xb = x[mask_a], x[mask_b]
        d = np.abs(xa[:, None] - xb[None, :])
        d = np.minimum(d, L - d)
        return float(d.min())
    ia, ja = np.nonzero(mask_a)
    ib, jb = np.nonzero(mask_b)
    d0 = np.abs(x[ia][:, None] - x[ib][None, :])
    d0 = np.minimum(d0, L - d0)
    d1 = np.abs(x[ja][:, None] - x[jb][None, :])
    d1 = np.minimum(d1, L - d1)
    return float(np.sqrt(d0**2 + d1**2).min())


@dataclass(frozen=True)
class GeometryPartition:
    """Disjoint node sets Omega, W1, W2 with a positive separation margin.

    Omega is the interior region carrying the potential; W1 and W2 are
    exterior excitation and test regions.  ``kappa`` is the smallest torus
    distance between Omega and W1 union W2.  ``time_slice`` indexes the open
    physical window (-T, T).
    """

    grid: SpaceTimeGrid
    omega_mask: np.ndarray
    w1_mask: np.ndarray
    w2_mask: np.ndarray
    kappa: float
    omega_spec: tuple = ()
    w1_spec: tuple = ()
    w2_spec: tuple = ()

    @property
    def time_slice(self) -> slice:
        return self.grid.physical_time_slice(open_window=True)

    @property
    def exterior_mask(self) -> np.ndarray:
        """Complement of Omega on the torus."""
        return ~self.omega_mask

    def interior_spacetime_mask(self) -> np.ndarray:
        """Boolean field-shaped mask of Omega x (-T, T)."""
        m = np.zeros(self.grid.field_shape, dtype=bool)
        m[self.time_slice] = self.omega_mask
        return m

    def region_spacetime_mask(self, region: str) -> np.ndarray:
        """Field-shaped mask of region x (-T, T); region in {omega, w1, w2, exterior}."""
        spatial = {
            "omega": self.omega_mask,
            "w1": self.w1_mask,
            "w2": self.w2_mask,
            "exterior": self.exterior_mask,
        }[region]
        m = np.zeros(self.grid.field_shape, dtype=bool)
        m[self.time_slice] = spatial
        return m


def make_partition(grid: SpaceTimeGrid, omega_spec, w1_spec, w2_spec) -> GeometryPartition:
    """Resolve interval/box specs into a validated :class:`GeometryPartition`.

    Raises
    ------
    ValueError
        On empty masks, overlap of Omega with W1 or W2 (or W1 with W2), or a
        zero separation margin.
    """
    omega = _spec_to_mask(grid, omega_spec)
    w1 = _spec_to_mask(grid, w1_spec)
    w2 = _spec_to_mask(grid, w2_spec)
    for name, m in (("omega", omega), ("w1", w1), ("w2", w2)):
        if not m.any():
            raise ValueError(f"empty mask: {name}")
    if (omega & w1).any() or (omega & w2).any():
        raise ValueError("overlap: omega intersects w1 or w2")
    if (w1 & w2).any():
        raise ValueError("overlap: w1 intersects w2")
    kappa = min(
        _min_periodic_distance(grid, omega, w1),
        _min_periodic_distance(grid, omega, w2),
    )
    if kappa <= 0:
        raise ValueError("zero separation margin between omega and w1/w2")
    return GeometryPartition(
        grid=grid,
        omega_mask=_readonly(omega),
        w1_mask=_readonly(w1),
        w2_mask=_readonly(w2),
        kappa=kappa,
        omega_spec=tuple(np.asarray(omega_spec, dtype=float).ravel()),
        w1_spec=tuple(np.asarray(w1_spec, dtype=float).ravel()),
        w2_spec=tuple(np.asarray(w2_spec, dtype=float).ravel()),
    )


@dataclass(frozen=True)
class Field:
    """Complex samples on a grid, indexed (time, space...), immutable."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.field_shape:
            raise ValueError(f"field shape {self.values.shape} != {self.grid.field_shape}")
        if not np.all(np.isfinite(self.values.view(float))):
            raise ValueError("field contains non-finite values")

    def copy_values(self) -> np.ndarray:
        return np.array(self.values)


def make_field(grid: SpaceTimeGrid, values: np.ndarray) -> Field:
    """Wrap sample values (cast to complex128) as an immutable Field."""
    vals = np.ascontiguousarray(values, dtype=np.complex128)
    return Field(grid=grid, values=_readonly(vals))


def zero_field(grid: SpaceTimeGrid) -> Field:
    return make_field(grid, np.zeros(grid.field_shape))


def field_from_function(grid: SpaceTimeGrid, fn) -> Field:
    """Sample fn(x, t) (1D) or fn(x, y, t) (2D) on the grid."""
    t = grid.time_coordinates()
    x = grid.spatial_coordinates()
    if grid.spatial_dim == 1:
        vals = fn(x[None, :], t[:, None])
    else:
        vals = fn(x[None, :, None], x[None, None, :], t[:, None, None])
    return make_field(grid, np.broadcast_to(vals, grid.field_shape))


def l2_inner_product(
    a: Field,
    b: Field,
    region: np.ndarray | None = None,
    weighted: bool = False,
    metric: MetricField | None = None,
) -> complex:
    """Discrete space-time L2 inner product dt*h^n * sum(a * conj(b)).

    ``region`` restricts the sum: either a field-shaped boolean mask or a
    spatial mask applied at every time node.  With ``weighted=True`` the sum
    carries the volume weight sqrt(|g|) of ``metric``.

    Summation is in ascending index order, so results are bit-reproducible.
    """
    if a.grid != b.grid:
        raise ValueError("grid mismatch between fields")
    grid = a.grid
    prod = a.values * np.conj(b.values)
    if weighted:
        if metric is None:
            raise ValueError("weighted inner product needs a metric")
        prod = prod * metric.sqrt_det
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape == grid.spatial_shape:
            mask = np.broadcast_to(region, grid.field_shape)
        elif region.shape == grid.field_shape:
            mask = region
        else:
            raise ValueError(f"region shape {region.shape} matches neither field nor spatial shape")
        prod = np.where(mask, prod, 0.0)
    return complex(grid.cell_volume * prod.sum())


def l2_norm(a: Field, region: np.ndarray | None = None, weighted: bool = False,
            metric: MetricField | None = None) -> float:
    """sqrt of the (possibly restricted, weighted) squared L2 norm."""
    val = l2_inner_product(a, a, region=region, weighted=weighted, metric=metric)
    return float(np.sqrt(max(val.real, 0.0)))
