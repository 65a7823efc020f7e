"""Galerkin solver for the initial-exterior value problem of the poly-parabolic operator.

The operator is P_V = sum_k b_k (d/dt - Lap_g)^{s_k} + V with exponents
0 < s_1 < ... < s_N < 1, weights b_k > 0, and a potential V supported on
Omega x (-T, T).  The discrete solution space is spanned by nodal
indicators of the interior nodes, so Galerkin orthogonality forces the
pointwise interior residual down to the solver tolerance.  Matrix entries
are pairings of the translation-invariant operator kernel, assembled from
one inverse transform of the multiplier table and indexed by node offsets.

The sesquilinear form pairs fields in the sqrt(|g|)-weighted space-time
inner product, under which the half-power pairing identities of the
spectral calculus hold exactly at the discrete level.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack as _lapack

from fracpara.grid import (
    Field,
    GeometryPartition,
    MetricField,
    SpaceTimeGrid,
    identity_metric,
    l2_norm,
    make_field,
)
from fracpara.operators import (
    FourierCalculus,
    apply_poly_parabolic,
    assemble_laplace_beltrami,
    fourier_calculus,
    principal_power,
)

_SOLVE_TOL = 1e-10
_RCOND_FLOOR = 1e-10
_MAX_REFINE = 8
_SUPPORT_TOL = 1e-13


class DirichletEigenvalueError(RuntimeError):
    """Raised when zero is (numerically) a Dirichlet eigenvalue of P_V."""


class SolverConvergenceError(RuntimeError):
    """Raised when iterative refinement stalls above the residual tolerance."""


@dataclass(frozen=True)
class PolyParabolicProblem:
    """Exponents, weights, potential, and geometry defining P_V.

    ``potential`` is a full-grid complex array supported on Omega x (-T, T);
    ``calc`` is the spectral calculus realizing the fractional powers (exact
    Fourier symbols for the flat metric, a dense eigendecomposition
    otherwise).
    """

    grid: SpaceTimeGrid
    partition: GeometryPartition
    metric: MetricField
    exponents: tuple
    weights: tuple
    potential: np.ndarray
    calc: object

    @property
    def s_max(self) -> float:
        return self.exponents[-1]

    def potential_field(self) -> Field:
        return make_field(self.grid, self.potential)


def make_problem(
    grid: SpaceTimeGrid,
    partition: GeometryPartition,
    exponents,
    weights,
    potential: np.ndarray | Field | None = None,
    metric: MetricField | None = None,
    calc=None,
) -> PolyParabolicProblem:
    """Validate and assemble a :class:`PolyParabolicProblem`.

    Raises
    ------
    ValueError
        If the exponents are not strictly increasing inside (0, 1), a weight
        is not positive, or the potential is not supported in Omega x (-T, T).
    """
    exponents = tuple(float(s) for s in exponents)
    weights = tuple(float(b) for b in weights)
    if len(exponents) != len(weights) or not exponents:
        raise ValueError("exponents and weights must be nonempty and of equal length")
    if any(not 0.0 < s < 1.0 for s in exponents):
        raise ValueError(f"exponents must lie in (0, 1), got {exponents}")
    if any(s2 <= s1 for s1, s2 in zip(exponents, exponents[1:])):
        raise ValueError(f"exponents must be strictly increasing, got {exponents}")
    if any(b <= 0 for b in weights):
        raise ValueError(f"weights must be positive, got {weights}")
    if partition.grid != grid:
        raise ValueError("partition grid mismatch")
    if metric is None:
        metric = identity_metric(grid)
    if isinstance(potential, Field):
        potential = potential.values
    if potential is None:
        potential = np.zeros(grid.field_shape, dtype=np.complex128)
    potential = np.ascontiguousarray(potential, dtype=np.complex128)
    if potential.shape != grid.field_shape:
        raise ValueError("potential must be a full-grid sample array")
    if not np.all(np.isfinite(potential.view(float))):
        raise ValueError("potential has non-finite entries")
    mask = partition.interior_spacetime_mask()
    outside = potential[~mask]
    scale = max(1.0, float(np.abs(potential).max()))
    if outside.size and np.abs(outside).max() > _SUPPORT_TOL * scale:
        raise ValueError("potential must be supported in Omega x (-T, T)")
    if calc is None:
        calc = fourier_calculus(grid) if metric.is_identity \
            else assemble_laplace_beltrami(grid, metric)
    return PolyParabolicProblem(
        grid=grid,
        partition=partition,
        metric=metric,
        exponents=exponents,
        weights=weights,
        potential=potential,
        calc=calc,
    )


def _poly_multiplier(exponents, weights, adjoint: bool):
    sign = -1.0 if adjoint else 1.0

    def fn(lam, sig):
        acc = None
        for s, b in zip(exponents, weights):
            term = b * principal_power(lam, sign * sig, float(s))
            acc = term if acc is None else acc + term
        return acc

    return fn


def interior_nodes(partition: GeometryPartition) -> tuple[np.ndarray, np.ndarray]:
    """(time index, flat spatial index) pairs of the Omega x (-T, T) nodes,
    time-major ascending."""
    ts = partition.time_slice
    t_win = np.arange(ts.start, ts.stop)
    x_nodes = np.flatnonzero(partition.omega_mask.ravel())
    tt = np.repeat(t_win, len(x_nodes))
    xx = np.tile(x_nodes, len(t_win))
    return tt, xx


def _kernel_matrix(calc, mult_fn, tt: np.ndarray, xx: np.ndarray) -> np.ndarray:
    """Pairing matrix M[q, p] = <K e_p, e_q>_w via the translation kernel of K."""
    grid = calc.grid
    cell = grid.cell_volume
    dt_lag = (tt[:, None] - tt[None, :]) % grid.time_points
    if isinstance(calc, FourierCalculus):
        table = np.asarray(calc.multiplier_table(mult_fn), dtype=np.complex128)
        kernel = np.fft.ifftn(table, axes=tuple(range(table.ndim)))
        kflat = kernel.reshape(grid.time_points, -1)
        if grid.spatial_dim == 1:
            dx_lag = (xx[:, None] - xx[None, :]) % grid.spatial_points
        else:
            n = grid.spatial_points
            r_q, c_q = np.divmod(xx[:, None], n)
            r_p, c_p = np.divmod(xx[None, :], n)
            dx_lag = ((r_q - r_p) % n) * n + ((c_q - c_p) % n)
        return cell * kflat[dt_lag, dx_lag]
    # dense path: per-frequency spatial blocks, inverse transform over lags
    decomp = calc
    x_nodes = np.unique(xx)
    pos = {x: i for i, x in enumerate(x_nodes)}
    xpos = np.array([pos[x] for x in xx])
    sub = decomp.eigenfunctions[x_nodes, :]
    table = decomp.multiplier_table(mult_fn)  # (N_t, M_modes)
    blocks = np.einsum("qj,sj,pj->sqp", sub, table, sub, optimize=True)
    kern_t = np.fft.ifft(blocks, axis=0)
    hn = grid.h**grid.spatial_dim
    sg = decomp.metric.sqrt_det.ravel()[xx]
    weight = cell * hn * sg[:, None] * sg[None, :]
    return kern_t[dt_lag, xpos[:, None], xpos[None, :]] * weight


def _assemble_rhs(
    problem: PolyParabolicProblem,
    tt: np.ndarray,
    xx: np.ndarray,
    f: Field | None,
    F: Field | None,
    adjoint: bool,
) -> np.ndarray:
    """Moments of F - P_V f against the interior nodal basis.

    The datum f may carry an interior component (a quotient representative);
    the V f term then keeps the solution independent of the representative.
    """
    grid = problem.grid
    sg = problem.metric.sqrt_det.ravel()[xx]
    rhs = np.zeros(len(tt), dtype=np.complex128)
    if f is not None:
        _check_exterior_support(problem, f)
        w = apply_poly_parabolic(problem.calc, f, problem.exponents,
                                 problem.weights, adjoint=adjoint)
        vdiag = problem.potential.reshape(grid.time_points, -1)[tt, xx]
        if adjoint:
            vdiag = np.conj(vdiag)
        f_int = f.values.reshape(grid.time_points, -1)[tt, xx]
        pf = w.values.reshape(grid.time_points, -1)[tt, xx] + vdiag * f_int
        rhs -= grid.cell_volume * sg * pf
    if F is not None:
        _check_interior_support(problem, F)
        rhs += grid.cell_volume * sg * F.values.reshape(grid.time_points, -1)[tt, xx]
    return rhs


@dataclass
class GalerkinSystem:
    """Assembled interior system for P_V (or its adjoint).

    ``matrix`` holds B_V(e_p, e_q) over the nodal indicator basis of
    Omega x (-T, T) plus the mu-shifted mass diagonal; ``rhs`` the moments
    of F - P_V f for the data passed at assembly.  The LU factorization is
    cached after the first solve, so repeated right-hand sides (one per DN
    excitation) reuse it.
    """

    problem: PolyParabolicProblem
    adjoint: bool
    t_idx: np.ndarray
    x_idx: np.ndarray
    matrix: np.ndarray
    rhs: np.ndarray
    mu: float = 0.0
    rcond: float = dataclass_field(default=np.nan, repr=False)
    _lu: tuple | None = dataclass_field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.rhs)

    def mass_diagonal(self) -> np.ndarray:
        sg = self.problem.metric.sqrt_det.ravel()[self.x_idx]
        return self.problem.grid.cell_volume * sg

    def factor(self) -> None:
        if self._lu is not None:
            return
        lu, piv = scipy.linalg.lu_factor(self.matrix, check_finite=False)
        anorm = np.linalg.norm(self.matrix, 1)
        gecon = _lapack.zgecon(lu, anorm)
        self.rcond = float(gecon[0])
        if self.rcond < _RCOND_FLOOR:
            raise DirichletEigenvalueError(
                f"Dirichlet eigenvalue: reciprocal condition estimate "
                f"{self.rcond:.3e} below {_RCOND_FLOOR:g}"
            )
        self._lu = (lu, piv)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Direct solve with iterative refinement to relative residual 1e-10."""
        self.factor()
        bscale = np.linalg.norm(rhs)
        if bscale == 0.0:
            return np.zeros_like(rhs)
        x = scipy.linalg.lu_solve(self._lu, rhs, check_finite=False)
        for _ in range(_MAX_REFINE):
            r = rhs - self.matrix @ x
            if np.linalg.norm(r) <= _SOLVE_TOL * bscale:
                return x
            x = x + scipy.linalg.lu_solve(self._lu, r, check_finite=False)
        r = rhs - self.matrix @ x
        if np.linalg.norm(r) > 100 * _SOLVE_TOL * bscale:
            raise SolverConvergenceError(
                f"iterative refinement stalled at relative residual "
                f"{np.linalg.norm(r) / bscale:.3e}"
            )
        return x


def _check_exterior_support(problem: PolyParabolicProblem, f: Field) -> None:
    # data may carry an interior (Omega_T) part: it is a representative of the
    # exterior equivalence class and does not change the solution
    scale = max(1.0, float(np.abs(f.values).max()))
    t = problem.grid.time_coordinates()
    outside = np.abs(t) > problem.grid.physical_half_window + 1e-12
    if np.abs(f.values[outside]).max(initial=0.0) > _SUPPORT_TOL * scale:
        raise ValueError("support violation: exterior data outside [-T, T]")


def _check_interior_support(problem: PolyParabolicProblem, F: Field) -> None:
    mask = problem.partition.interior_spacetime_mask()
    scale = max(1.0, float(np.abs(F.values).max()))
    if np.abs(F.values[~mask]).max(initial=0.0) > _SUPPORT_TOL * scale:
        raise ValueError("support violation: source term outside Omega x (-T, T)")


def assemble_system(
    problem: PolyParabolicProblem,
    f: Field | None = None,
    F: Field | None = None,
    adjoint: bool = False,
    mu: float = 0.0,
) -> GalerkinSystem:
    """Assemble B_V(e_p, e_q) (+ mu * mass) and the reduced right-hand side.

    The adjoint system uses multipliers (lam - i*sigma)^{s_k} and the
    conjugated potential, the operator adjoint of P_V under the weighted
    pairing (identical to the forward potential when V is real).
    """
    tt, xx = interior_nodes(problem.partition)
    mult = _poly_multiplier(problem.exponents, problem.weights, adjoint)
    matrix = _kernel_matrix(problem.calc, mult, tt, xx)
    grid = problem.grid
    vdiag = problem.potential.reshape(grid.time_points, -1)[tt, xx]
    if adjoint:
        vdiag = np.conj(vdiag)
    sg = problem.metric.sqrt_det.ravel()[xx]
    matrix = matrix + np.diag(grid.cell_volume * sg * (vdiag + mu))
    rhs = _assemble_rhs(problem, tt, xx, f, F, adjoint)
    return GalerkinSystem(
        problem=problem, adjoint=adjoint, t_idx=tt, x_idx=xx,
        matrix=matrix, rhs=rhs, mu=mu,
    )


@dataclass(frozen=True)
class Solution:
    """Full-grid solution with exterior datum and residual diagnostics.

    ``interior_residual`` is the L2(Omega_T) norm of P_V u - F recomputed by
    fresh operator applications (not the assembled matrix);
    ``exterior_residual`` and ``initial_residual`` measure the constraints
    u = f outside and u = 0 on the initial (or future, for adjoint) side.
    """

    u: Field
    exterior_data: Field
    adjoint: bool
    interior_residual: float
    relative_interior_residual: float
    exterior_residual: float
    initial_residual: float
    solve_rcond: float

    def interior_values(self, partition: GeometryPartition) -> np.ndarray:
        return self.u.values[partition.interior_spacetime_mask()]


def _scatter_solution(system: GalerkinSystem, f: Field | None, v: np.ndarray) -> Field:
    # u = (extension of the datum) + v; adding v keeps u independent of the
    # interior part of a representative datum
    grid = system.problem.grid
    vals = f.copy_values() if f is not None else np.zeros(grid.field_shape, dtype=np.complex128)
    flat = vals.reshape(grid.time_points, -1)
    flat[system.t_idx, system.x_idx] += v
    return make_field(grid, vals)


def _diagnose(problem: PolyParabolicProblem, u: Field, f: Field | None,
              F: Field | None, adjoint: bool, rcond: float) -> Solution:
    grid = problem.grid
    mask = problem.partition.interior_spacetime_mask()
    op_u = apply_poly_parabolic(problem.calc, u, problem.exponents,
                                problem.weights, adjoint=adjoint)
    pot = np.conj(problem.potential) if adjoint else problem.potential
    resid = op_u.values + pot * u.values
    if F is not None:
        resid = resid - F.values
    w_int = float(np.sqrt(grid.cell_volume * np.sum(np.abs(resid[mask]) ** 2)))
    u_norm = l2_norm(u)
    if f is not None:
        ext_res = float(np.abs((u.values - f.values)[~mask]).max(initial=0.0))
    else:
        ext_res = float(np.abs(u.values[~mask]).max(initial=0.0))
    t = grid.time_coordinates()
    T = grid.physical_half_window
    off = (t >= T - 1e-12) if adjoint else (t <= -T + 1e-12)
    init_res = float(np.abs(u.values[off]).max(initial=0.0))
    fdata = f if f is not None else make_field(grid, np.zeros(grid.field_shape))
    return Solution(
        u=u,
        exterior_data=fdata,
        adjoint=adjoint,
        interior_residual=w_int,
        relative_interior_residual=w_int / u_norm if u_norm > 0 else 0.0,
        exterior_residual=ext_res,
        initial_residual=init_res,
        solve_rcond=float(rcond),
    )


def _solve_impl(problem, data, F, system, adjoint: bool) -> Solution:
    if system is None:
        system = assemble_system(problem, data, F, adjoint=adjoint)
        rhs = system.rhs
    else:
        if system.adjoint != adjoint or system.problem is not problem:
            raise ValueError("system does not match the requested solve")
        rhs = _assemble_rhs(problem, system.t_idx, system.x_idx, data, F, adjoint)
    v = system.solve(rhs)
    u = _scatter_solution(system, data, v)
    return _diagnose(problem, u, data, F, adjoint=adjoint, rcond=system.rcond)


def solve_forward(
    problem: PolyParabolicProblem,
    f: Field | None,
    F: Field | None = None,
    system: GalerkinSystem | None = None,
) -> Solution:
    """Solve P_V u = F in Omega_T, u = f outside, u = 0 for t <= -T.

    Passing a pre-assembled forward ``system`` reuses its factorization;
    the right-hand side is rebuilt for the given data.  Identical inputs
    produce bitwise identical solutions.
    """
    return _solve_impl(problem, f, F, system, adjoint=False)


def solve_adjoint(
    problem: PolyParabolicProblem,
    zeta: Field | None,
    F: Field | None = None,
    system: GalerkinSystem | None = None,
) -> Solution:
    """Solve the adjoint problem (conjugate multipliers and potential) with
    vanishing future condition u = 0 for t >= T."""
    return _solve_impl(problem, zeta, F, system, adjoint=True)


def sesquilinear_pairing(problem: PolyParabolicProblem, u: Field, w: Field) -> complex:
    """B_V(u, w) = sum_k b_k <H^{s_k} u, w>_weighted + (V u, w)_{Omega_T, weighted}."""
    grid = problem.grid
    op_u = apply_poly_parabolic(problem.calc, u, problem.exponents, problem.weights)
    sg = problem.metric.sqrt_det
    total = grid.cell_volume * np.sum((op_u.values * sg) * np.conj(w.values))
    mask = problem.partition.interior_spacetime_mask()
    vu = (problem.potential * u.values * sg)[mask]
    total = total + grid.cell_volume * np.sum(vu * np.conj(w.values[mask]))
    return complex(total)


def coercivity_constant(exponents) -> float:
    """min_k cos(s_k * pi / 2): the uniform lower bound on Re(multiplier) /
    |multiplier| over the right half-plane, which drives solvability."""
    return float(min(np.cos(np.pi * float(s) / 2.0) for s in exponents))


def coercivity_margin(problem: PolyParabolicProblem, mu: float = 0.0) -> float:
    """Smallest eigenvalue of the Hermitian part of the shifted Galerkin
    matrix, normalized by the discrete H^{s_N} Gram of the interior basis.

    Requires mu >= ||min(Re V, 0)||_inf; the margin is positive exactly when
    the shifted form is coercive on the discrete interior space.
    """
    vmin = float(np.minimum(problem.potential.real, 0.0).min())
    if mu < -vmin - 1e-12:
        raise ValueError(f"mu must be at least ||min(V,0)||_inf = {-vmin}")
    system = assemble_system(problem, mu=mu)
    herm = 0.5 * (system.matrix + system.matrix.conj().T)
    s_n = problem.s_max

    def gram_mult(lam, sig):
        return (1.0 + lam**2 + sig**2) ** (s_n / 2.0) + 0j

    tt, xx = system.t_idx, system.x_idx
    gram = _kernel_matrix(problem.calc, gram_mult, tt, xx)
    gram = 0.5 * (gram + gram.conj().T)
    vals = scipy.linalg.eigh(herm, gram, eigvals_only=True,
                             subset_by_index=[0, 0], check_finite=False)
    return float(vals[0])


def eigenvalue_condition_check(problem: PolyParabolicProblem) -> dict:
    """Smallest-singular-value margin of the Galerkin matrix, relative to its norm.

    Returns {"ok": bool, "margin": sigma_min / sigma_max}; ok is False when
    the margin drops below 1e-10 (zero is numerically a Dirichlet eigenvalue
    of P_V).  Bounded potentials V >= 0 always pass.
    """
    system = assemble_system(problem)
    sv = scipy.linalg.svdvals(system.matrix, check_finite=False)
    margin = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
    return {"ok": bool(margin >= _RCOND_FLOOR), "margin": margin}
