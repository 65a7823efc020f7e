"""Exterior Dirichlet-to-Neumann matrices and the integral identity.

The DN map is realized through the sesquilinear form: the matrix entry for
excitation f_i and test bump zeta_j is B_V(u_{f_i}, zeta_j), never a
pointwise restriction of the nonlocal operator to exterior nodes.  Entries
depend only on the equivalence class of the excitation modulo fields
supported in Omega x (-T, T).

Matrices persist as a CSV of interleaved re,im columns plus a JSON sidecar
carrying the basis parameters and a problem fingerprint, so a measurement
file pair is self-describing for the reconstruction module.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fracpara.fieldio import _grid_header
from fracpara.forward import (
    PolyParabolicProblem,
    assemble_system,
    solve_adjoint,
    solve_forward,
)
from fracpara.grid import Field, GeometryPartition, SpaceTimeGrid, make_field
from fracpara.operators import apply_poly_parabolic

DN_SCHEMA = "fracpara/dn-v1"
_GRAM_RCOND = 1e-10


@dataclass(frozen=True)
class ExteriorBasis:
    """Ordered normalized space-time bumps supported in region x (t_a, t_b).

    ``elements`` stacks the member fields, shape (n, *field_shape); the
    members are unit vectors in the weighted space-time L2 norm and their
    Gram matrix is certified nonsingular at construction.
    """

    grid: SpaceTimeGrid
    region: str
    elements: np.ndarray
    centers: tuple
    window: tuple
    n_space: int
    n_time: int
    kind: str

    def __len__(self) -> int:
        return self.elements.shape[0]

    def field(self, i: int) -> Field:
        return make_field(self.grid, self.elements[i])

    def combine(self, coeffs: np.ndarray) -> Field:
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape != (len(self),):
            raise ValueError("coefficient length does not match basis")
        return make_field(self.grid, np.tensordot(coeffs, self.elements, axes=(0, 0)))

    def gram(self, cell_volume: float) -> np.ndarray:
        flat = self.elements.reshape(len(self), -1)
        return cell_volume * (flat @ flat.conj().T)

    def parameters(self) -> dict:
        return {
            "region": self.region,
            "n_space": self.n_space,
            "n_time": self.n_time,
            "window": list(self.window),
            "kind": self.kind,
        }


def _hat(length: int, center: int, half_width: int) -> np.ndarray:
    i = np.arange(length)
    return np.maximum(0.0, 1.0 - np.abs(i - center) / max(half_width, 1))


def make_exterior_basis(
    partition: GeometryPartition,
    region: str,
    n_space: int,
    n_time: int,
    window: tuple[float, float] | None = None,
    kind: str = "hat",
) -> ExteriorBasis:
    """Tensor bumps (spatial hat or nodal indicator, times a time hat) in W x window.

    Centers are spread evenly over the region's nodes and the window's
    interior time slices.  Every element is normalized in the space-time L2
    norm; construction fails if the Gram matrix is numerically singular.
    """
    grid = partition.grid
    if region not in ("w1", "w2"):
        raise ValueError(f"region must be 'w1' or 'w2', got {region!r}")
    mask = partition.w1_mask if region == "w1" else partition.w2_mask
    T = grid.physical_half_window
    if window is None:
        window = (-T, T)
    t_lo, t_hi = window
    if not (-T <= t_lo < t_hi <= T):
        raise ValueError(f"window {window} must sit inside [-T, T]")
    t_mask = grid.time_window_mask(t_lo, t_hi, open_window=True)
    t_slices = np.flatnonzero(t_mask)
    x_nodes = np.flatnonzero(mask.ravel())
    if n_space < 1 or n_time < 1:
        raise ValueError("need at least one bump per axis")
    if n_space > len(x_nodes) or n_time > len(t_slices):
        raise ValueError("more bumps requested than nodes available")
    if kind not in ("hat", "indicator"):
        raise ValueError(f"unknown bump kind {kind!r}")
    if kind == "hat" and grid.spatial_dim == 2:
        raise ValueError("tensor hats are 1D; use kind='indicator' on 2D grids")

    x_positions = x_nodes[np.round(np.linspace(0, len(x_nodes) - 1, n_space)).astype(int)]
    t_positions = t_slices[np.round(np.linspace(0, len(t_slices) - 1, n_time)).astype(int)]
    x_hw = max(1, len(x_nodes) // (n_space + 1))
    t_hw = max(1, len(t_slices) // (n_time + 1))

    n_flat = grid.spatial_points**grid.spatial_dim
    elements = np.zeros((n_space * n_time,) + grid.field_shape, dtype=np.complex128)
    centers = []
    flat_mask = mask.ravel()
    cell = grid.cell_volume
    k = 0
    for tp in t_positions:
        t_profile = np.zeros(grid.time_points)
        hat_t = _hat(grid.time_points, tp, t_hw)
        t_profile[t_slices] = hat_t[t_slices]
        for xp in x_positions:
            if kind == "indicator":
                x_profile = np.zeros(n_flat)
                x_profile[xp] = 1.0
            else:
                x_profile = _hat(n_flat, xp, x_hw)
                x_profile[~flat_mask] = 0.0
            vals = t_profile[:, None] * x_profile[None, :]
            nrm = np.sqrt(cell * np.sum(np.abs(vals) ** 2))
            elements[k] = (vals / nrm).reshape(grid.field_shape)
            centers.append((int(xp), int(tp)))
            k += 1
    basis = ExteriorBasis(
        grid=grid, region=region, elements=elements, centers=tuple(centers),
        window=(float(t_lo), float(t_hi)), n_space=n_space, n_time=n_time, kind=kind,
    )
    gram = basis.gram(cell)
    eigs = np.linalg.eigvalsh(gram)
    if eigs[0] < _GRAM_RCOND * eigs[-1]:
        raise ValueError("basis Gram matrix is numerically singular")
    return basis


def problem_fingerprint(problem: PolyParabolicProblem) -> str:
    """SHA-256 over exponents, weights, metric samples, potential samples, grid."""
    h = hashlib.sha256()
    h.update(np.asarray(problem.exponents, dtype="<f8").tobytes())
    h.update(np.asarray(problem.weights, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(problem.metric.values, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(problem.potential, dtype="<c16").tobytes())
    h.update(json.dumps(_grid_header(problem.grid), sort_keys=True).encode())
    return h.hexdigest()


def geometry_fingerprint(problem: PolyParabolicProblem) -> str:
    """Fingerprint of everything except the potential (shared by V and V0 runs)."""
    h = hashlib.sha256()
    h.update(np.asarray(problem.exponents, dtype="<f8").tobytes())
    h.update(np.asarray(problem.weights, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(problem.metric.values, dtype="<f8").tobytes())
    h.update(json.dumps(_grid_header(problem.grid), sort_keys=True).encode())
    h.update(np.packbits(problem.partition.omega_mask.ravel()).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class DNMatrix:
    """Finite restriction of the DN map to excitation and test bases.

    Forward map (adjoint=False): entries[j, i] = B_V(u_{f_i}, zeta_j),
    shape (n_tests, n_excitations).  Adjoint map (adjoint=True):
    entries[i, j] = B_V(f_i, u_{zeta_j}), shape (n_excitations, n_tests),
    so the adjoint matrix equals the transpose of the forward one up to
    solver tolerance (the natural pairing property).
    """

    entries: np.ndarray
    excitations: ExteriorBasis
    tests: ExteriorBasis
    adjoint: bool
    fingerprint: str
    geometry: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def as_forward_oriented(self) -> np.ndarray:
        """Entries arranged (test row, excitation column) regardless of kind."""
        return self.entries.T if self.adjoint else self.entries


def assemble_dn_map(
    problem: PolyParabolicProblem,
    excitations: ExteriorBasis,
    tests: ExteriorBasis,
    adjoint: bool = False,
) -> DNMatrix:
    """One solve per input-basis element, entries by sesquilinear pairing.

    Excitations live in W1 and tests in W2 for both kinds; the adjoint flag
    switches to adjoint solves driven by the test bumps.  Solver failures
    abort the whole assembly with the offending column in the message.
    """
    for basis in (excitations, tests):
        if basis.grid != problem.grid:
            raise ValueError("basis grid mismatch")
    grid = problem.grid
    cell = grid.cell_volume
    sg = problem.metric.sqrt_det
    system = assemble_system(problem, adjoint=adjoint)
    system.factor()

    inputs = tests if adjoint else excitations
    probes = excitations if adjoint else tests
    probe_flat = probes.elements.reshape(len(probes), -1).conj()

    cols = []
    for i in range(len(inputs)):
        f_i = inputs.field(i)
        try:
            if not adjoint:
                sol = solve_forward(problem, f_i, system=system)
                op = apply_poly_parabolic(problem.calc, sol.u, problem.exponents,
                                          problem.weights)
                # column i of entries[j, i] = <sum_k b_k H^{s_k} u_{f_i}, zeta_j>_w
                cols.append(cell * (probe_flat @ (op.values * sg).ravel()))
            else:
                sol = solve_adjoint(problem, f_i, system=system)
                op = apply_poly_parabolic(problem.calc, sol.u, problem.exponents,
                                          problem.weights, adjoint=True)
                # column i of entries[j, i] = <f_j, sum_k b_k H_*^{s_k} u_{zeta_i}>_w
                cols.append(cell * np.conj(probe_flat @ (op.values * sg).ravel()))
        except Exception as exc:
            raise RuntimeError(
                f"DN assembly failed at {'test' if adjoint else 'excitation'} "
                f"column {i}: {exc}"
            ) from exc
    entries = np.stack(cols, axis=1)
    return DNMatrix(
        entries=entries,
        excitations=excitations,
        tests=tests,
        adjoint=adjoint,
        fingerprint=problem_fingerprint(problem),
        geometry=geometry_fingerprint(problem),
    )


def dn_pairing(dn: DNMatrix, coeffs_f: np.ndarray, coeffs_zeta: np.ndarray) -> complex:
    """Evaluate the pairing <Lambda f, zeta> = coeffs_zeta^H . Lambda . coeffs_f.

    For an adjoint matrix this computes <f, Lambda* zeta>, which equals the
    forward pairing by construction.
    """
    coeffs_f = np.asarray(coeffs_f, dtype=np.complex128)
    coeffs_zeta = np.asarray(coeffs_zeta, dtype=np.complex128)
    entries = dn.as_forward_oriented()
    n_test, n_exc = entries.shape
    if coeffs_f.shape != (n_exc,):
        raise ValueError(f"excitation coefficients must have length {n_exc}")
    if coeffs_zeta.shape != (n_test,):
        raise ValueError(f"test coefficients must have length {n_test}")
    return complex(coeffs_zeta.conj() @ entries @ coeffs_f)


def integral_identity_residual(
    problem_1: PolyParabolicProblem,
    problem_2: PolyParabolicProblem,
    f1: Field,
    f2: Field,
) -> dict:
    """Check <(Lambda_{V1} - Lambda_{V2}) f1, f2> = ((V1 - V2) u1, u2)_{Omega_T}.

    u1 solves the V1 forward problem with datum f1; u2 the V2 adjoint
    problem with datum f2.  Both sides are evaluated independently; the
    residual is |lhs - rhs| / max(|lhs|, |rhs|, eps) with a data-scaled
    floor eps, so identical potentials report a zero-size residual rather
    than a 0/0 artifact.
    """
    if problem_1.grid != problem_2.grid:
        raise ValueError("problems live on different grids")
    if problem_1.exponents != problem_2.exponents or problem_1.weights != problem_2.weights:
        raise ValueError("problems must share exponents and weights")
    grid = problem_1.grid
    cell = grid.cell_volume
    sg = problem_1.metric.sqrt_det

    u1 = solve_forward(problem_1, f1)
    u1b = solve_forward(problem_2, f1)
    u2 = solve_adjoint(problem_2, f2)

    def dn_pair(sol_u) -> complex:
        op = apply_poly_parabolic(problem_1.calc, sol_u.u, problem_1.exponents,
                                  problem_1.weights)
        return complex(cell * np.sum(op.values * sg * np.conj(f2.values)))

    lhs = dn_pair(u1) - dn_pair(u1b)
    mask = problem_1.partition.interior_spacetime_mask()
    dv = (problem_1.potential - problem_2.potential)[mask]
    sg_field = np.broadcast_to(sg, grid.field_shape)[mask]
    rhs = complex(cell * np.sum(dv * u1.u.values[mask] * np.conj(u2.u.values[mask]) * sg_field))
    f_scale = np.sqrt(cell * np.sum(np.abs(f1.values) ** 2)) * \
        np.sqrt(cell * np.sum(np.abs(f2.values) ** 2))
    eps = 1e-10 * max(f_scale, 1e-300)
    residual = abs(lhs - rhs) / max(abs(lhs), abs(rhs), eps)
    return {"lhs": lhs, "rhs": rhs, "residual": float(residual)}


def _format_complex_row(row: np.ndarray) -> str:
    parts = []
    for z in row:
        parts.append(repr(float(z.real)))
        parts.append(repr(float(z.imag)))
    return ",".join(parts)


def write_dn_matrix(dn: DNMatrix, stem: str | Path) -> tuple[Path, Path]:
    """Write <stem>.dn.csv (header 'rows,cols', then interleaved re,im columns)
    and <stem>.dn.json (bases, fingerprints, grid)."""
    stem = Path(stem)
    csv_path = stem.with_suffix(".dn.csv")
    json_path = stem.with_suffix(".dn.json")
    n_test, n_exc = dn.shape
    lines = [f"{n_test},{n_exc}"]
    for j in range(n_test):
        lines.append(_format_complex_row(dn.entries[j]))
    csv_path.write_text("\n".join(lines) + "\n")
    sidecar = {
        "schema": DN_SCHEMA,
        "adjoint": dn.adjoint,
        "rows_are": "test",
        "cols_are": "excitation",
        "fingerprint": dn.fingerprint,
        "geometry": dn.geometry,
        "grid": _grid_header(dn.excitations.grid),
        "excitations": dn.excitations.parameters(),
        "tests": dn.tests.parameters(),
    }
    json_path.write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n")
    return csv_path, json_path


def read_dn_matrix(stem: str | Path, partition: GeometryPartition) -> DNMatrix:
    """Rebuild a DNMatrix (entries plus regenerated bases) from a file pair."""
    stem = Path(stem)
    csv_path = stem.with_suffix(".dn.csv")
    json_path = stem.with_suffix(".dn.json")
    sidecar = json.loads(json_path.read_text())
    if sidecar.get("schema") != DN_SCHEMA:
        raise ValueError(f"{json_path}: unsupported schema {sidecar.get('schema')!r}")
    lines = csv_path.read_text().splitlines()
    n_test, n_exc = (int(v) for v in lines[0].split(","))
    if len(lines) != 1 + n_test:
        raise ValueError(f"{csv_path}: row count mismatch")
    entries = np.empty((n_test, n_exc), dtype=np.complex128)
    for j, line in enumerate(lines[1:]):
        vals = np.array([float(v) for v in line.split(",")])
        if vals.size != 2 * n_exc:
            raise ValueError(f"{csv_path}: column count mismatch at row {j}")
        entries[j] = vals[0::2] + 1j * vals[1::2]

    def rebuild(params: dict) -> ExteriorBasis:
        return make_exterior_basis(
            partition, params["region"], params["n_space"], params["n_time"],
            window=tuple(params["window"]), kind=params["kind"],
        )

    return DNMatrix(
        entries=entries,
        excitations=rebuild(sidecar["excitations"]),
        tests=rebuild(sidecar["tests"]),
        adjoint=bool(sidecar["adjoint"]),
        fingerprint=sidecar["fingerprint"],
        geometry=sidecar["geometry"],
    )
