"""Quadrature oracles for fractional powers.

Two independent routes to (lam + i*sigma)^s back-stop the spectral calculus:

* :func:`frac_power_balakrishnan_symbol` integrates the scalar identity
  (1/Gamma(-s)) * int_0^inf (exp(-(lam+i*sigma)*tau) - 1) tau^(-1-s) dtau
  with analytic head and tail corrections outside the quadrature window.
* :func:`frac_power_kernel_quadrature` evaluates the operator on a field in
  physical space: truncated periodic Gaussian heat-kernel sums in space,
  linear interpolation for the time shift, and a short-time Taylor head
  built from finite-difference powers of (d/dt - Lap).  It deliberately
  shares no transforms with the spectral path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn

from fracpara.grid import Field, SpaceTimeGrid, make_field
from fracpara.operators import frac_exponent

_TAIL_SERIES_TERMS = 8
_TAIL_MIN_ZTAU = 8.0


@dataclass(frozen=True)
class QuadratureRule:
    """Composite-trapezoid nodes for the Balakrishnan tau-integral.

    Nodes are log-spaced on [tau_min, split_a] and linearly spaced on
    [split_a, tau_max]; weights are the trapezoid weights of the combined
    strictly increasing node set.
    """

    split_a: float
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def tau_min(self) -> float:
        return float(self.nodes[0])

    @property
    def tau_max(self) -> float:
        return float(self.nodes[-1])


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    w = np.zeros_like(nodes)
    d = np.diff(nodes)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def make_quadrature_rule(
    tau_min: float = 1e-6,
    split_a: float = 1.0,
    tau_max: float = 50.0,
    n_low: int = 200,
    n_high: int = 400,
) -> QuadratureRule:
    """Build the split log/linear trapezoid rule (defaults are config-overridable)."""
    if not (0 < tau_min < split_a < tau_max):
        raise ValueError("need 0 < tau_min < split_a < tau_max")
    if n_low < 2 or n_high < 2:
        raise ValueError("need at least two nodes per segment")
    low = np.geomspace(tau_min, split_a, n_low)
    high = np.linspace(split_a, tau_max, n_high)
    nodes = np.concatenate([low, high[1:]])
    if not np.all(np.diff(nodes) > 0):
        raise ValueError("quadrature nodes must be strictly increasing")
    return QuadratureRule(split_a=float(split_a), nodes=nodes, weights=trapezoid_weights(nodes))


def _tail_exponential_part(z: complex, tau_max: float, s: float) -> complex:
    """Asymptotic series for int_{tau_max}^inf exp(-z*tau) tau^(-1-s) dtau."""
    zt = z * tau_max
    if abs(zt) < _TAIL_MIN_ZTAU:
        raise ValueError(
            f"tail not resolvable: |lam + i sigma| * tau_max = {abs(zt):.3g} < {_TAIL_MIN_ZTAU}; "
            "increase tau_max"
        )
    if zt.real > 700.0:
        return 0.0
    acc = 0.0 + 0.0j
    term = 1.0 + 0.0j
    for j in range(_TAIL_SERIES_TERMS):
        if j > 0:
            term *= -(s + j) / zt
        acc += term
    return np.exp(-zt) * tau_max ** (-1.0 - s) / z * acc


def frac_power_balakrishnan_symbol(
    lam: float, sigma: float, s: float, rule: QuadratureRule
) -> complex:
    """Numerically evaluate (lam + i*sigma)^s from the heat-semigroup integral.

    Serves as an oracle for the multipliers of the spectral calculus; the
    analytic pieces below tau_min (Taylor in z*tau) and above tau_max
    (exact -tau_max^(-s)/s plus an asymptotic exponential remainder) keep
    the truncation error below the quadrature error.

    Raises
    ------
    ValueError
        At the joint zero lam = sigma = 0 (divergent tail) and when the
        decaying tail cannot be resolved within tau_max.
    """
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    frac_exponent(s)
    if not 0 < s < 1:
        raise ValueError(f"symbol quadrature needs s in (0, 1), got {s}")
    z = complex(lam, sigma)
    if z == 0:
        raise ValueError("divergent tail at lam = sigma = 0")
    tau = rule.nodes
    integrand = np.expm1(-z * tau) * tau ** (-1.0 - s)
    body = np.sum(rule.weights * integrand)
    t0 = rule.tau_min
    head = (
        -z * t0 ** (1.0 - s) / (1.0 - s)
        + z**2 * t0 ** (2.0 - s) / (2.0 * (2.0 - s))
        - z**3 * t0 ** (3.0 - s) / (6.0 * (3.0 - s))
    )
    tail = -rule.tau_max ** (-s) / s + _tail_exponential_part(z, rule.tau_max, s)
    return complex((head + body + tail) / gamma_fn(-s))


def _fd_parabolic_power(values: np.ndarray, grid: SpaceTimeGrid, order: int) -> np.ndarray:
    """(d/dt - Lap)^order by fourth-order periodic finite differences."""
    out = values
    dt, h = grid.dt, grid.h
    for _ in range(order):
        ut = (
            -np.roll(out, -2, axis=0) + 8 * np.roll(out, -1, axis=0)
            - 8 * np.roll(out, 1, axis=0) + np.roll(out, 2, axis=0)
        ) / (12 * dt)
        lap = np.zeros_like(out)
        for ax in range(1, 1 + grid.spatial_dim):
            lap += (
                -np.roll(out, -2, axis=ax) + 16 * np.roll(out, -1, axis=ax)
                - 30 * out + 16 * np.roll(out, 1, axis=ax) - np.roll(out, 2, axis=ax)
            ) / (12 * h * h)
        out = ut - lap
    return out


def _periodic_gaussian_row(grid: SpaceTimeGrid, tau: float) -> np.ndarray:
    """Unit-mass sampled 1D heat kernel against displacement nodes (flat metric).

    The 2D kernel is the outer product of this row with itself.
    """
    L = grid.spatial_extent
    n = grid.spatial_points
    d = grid.h * np.arange(n)
    n_images = int(np.ceil(np.sqrt(160.0 * tau) / L)) + 1
    shifts = L * np.arange(-n_images, n_images + 1)
    row = np.exp(-((d[:, None] + shifts[None, :]) ** 2) / (4 * tau)).sum(axis=1)
    row *= (4 * np.pi * tau) ** -0.5 * grid.h
    return row / row.sum()


def _circulant_apply(row: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    """Periodic convolution sum_d row[d] * arr[..., i - d, ...] along ``axis``."""
    n = len(row)
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    kern = row[idx]  # kern[i, j] = row[i - j mod n]
    moved = np.moveaxis(arr, axis, -1)
    return np.moveaxis(moved @ kern.T, -1, axis)


def _shifted_in_time(values: np.ndarray, shift: float, dt: float, periodic: bool) -> np.ndarray:
    """values(t - shift) by linear interpolation; zero or periodic extension."""
    steps = shift / dt
    i0 = int(np.floor(steps))
    frac = steps - i0
    nt = values.shape[0]

    def grab(k: int) -> np.ndarray:
        if periodic:
            return np.roll(values, k, axis=0)
        out = np.zeros_like(values)
        if k >= nt:
            return out
        if k >= 0:
            out[k:] = values[: nt - k]
        else:
            out[:k] = values[-k:]
        return out

    if frac == 0.0:
        return grab(i0)
    return (1.0 - frac) * grab(i0) + frac * grab(i0 + 1)


def frac_power_kernel_quadrature(
    grid: SpaceTimeGrid,
    u: Field,
    s: float,
    rule: QuadratureRule,
    time_extension: str = "zero",
    tau_head: float | None = None,
    head_terms: int = 3,
) -> Field:
    """Physical-space evaluation of (d/dt - Lap)^s u for the flat metric.

    Integrates (P_tau u(., t - tau) - u) against tau^(-1-s)/Gamma(-s) with
    sampled periodic Gaussian kernels P_tau, linear interpolation for the
    time shift, a finite-difference Taylor head on [0, tau_head], and the
    exact -u * tau_max^(-s)/s tail.  ``time_extension`` is "zero" for fields
    supported in [-T, T] or "periodic" for globally periodic test waves
    (exact only when the spatial mean vanishes or u is constant).
    """
    if u.grid != grid:
        raise ValueError("grid mismatch")
    if not 0 < s < 1:
        raise ValueError(f"kernel quadrature needs s in (0, 1), got {s}")
    if time_extension not in ("zero", "periodic"):
        raise ValueError(f"unknown time_extension {time_extension!r}")
    periodic = time_extension == "periodic"
    if tau_head is None:
        tau_head = 4.0 * grid.h**2
    g = gamma_fn(-s)
    vals = u.values

    # Taylor head: int_0^tau_head (e^{-tau H} - 1) u tau^{-1-s} dtau
    out = np.zeros_like(vals)
    power = vals
    fact = 1.0
    for j in range(1, head_terms + 1):
        power = _fd_parabolic_power(power, grid, 1)
        fact *= j
        out += (-1.0) ** j * power * tau_head ** (j - s) / (fact * (j - s))

    # quadrature on [tau_head, tau_max]: rebuild the split rule from tau_head
    n_low = np.count_nonzero(rule.nodes <= rule.split_a)
    n_high = len(rule.nodes) - n_low + 1
    a = max(rule.split_a, 2.0 * tau_head)
    low = np.geomspace(tau_head, a, max(n_low, 2))
    high = np.linspace(a, rule.tau_max, max(n_high, 2))
    nodes = np.concatenate([low, high[1:]])
    weights = trapezoid_weights(nodes)

    window = 2.0 * grid.padding_factor * grid.physical_half_window
    for tau, w in zip(nodes, weights):
        coeff = w * tau ** (-1.0 - s)
        if (not periodic) and tau >= window:
            out -= coeff * vals
            continue
        shifted = _shifted_in_time(vals, tau, grid.dt, periodic)
        row = _periodic_gaussian_row(grid, tau)
        conv = _circulant_apply(row, shifted, axis=1)
        if grid.spatial_dim == 2:
            conv = _circulant_apply(row, conv, axis=2)
        out += coeff * (conv - vals)

    # analytic tail: convolved part is zero (supported u) or the global mean
    tail_weight = rule.tau_max ** (-s) / s
    if periodic:
        out += tail_weight * (vals.mean() - vals)
    else:
        out -= tail_weight * vals
    return make_field(grid, out / g)
