"""Constructive inversion: Runge controls, potential reconstruction, moment probes.

The reconstruction rests on the exact identity
<(Lambda_V - Lambda_V0) f, zeta> = ((V - V0) u^V_f, z^V0_zeta)_{Omega_T}:
replacing u^V_f by the baseline solution linearizes it (Born step), and
refreshing u_f with the current estimate restores exactness iteratively.

The moment machinery probes the separation of distinct fractional powers:
nonresonant exponent tuples admit no nonzero profile family annihilating
all Gamma-weighted moments, while integer-shifted exponents admit an exact
cancellation witness built from the local integer power.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.linalg
from scipy.special import gamma as gamma_fn

from fracpara.dnmap import DNMatrix, ExteriorBasis, assemble_dn_map, geometry_fingerprint
from fracpara.forward import (
    PolyParabolicProblem,
    assemble_system,
    interior_nodes,
    make_problem,
    solve_adjoint,
    solve_forward,
)
from fracpara.grid import Field, GeometryPartition, make_field
from fracpara.operators import apply_frac_power, apply_integer_power, frac_exponent
from fracpara.quadrature import QuadratureRule

_NONRESONANCE_TOL = 1e-9
_DECAY_FLOOR = 1e-280


class DivergenceError(ValueError):
    """Raised when a moment integral cannot converge near tau = 0."""


# ---------------------------------------------------------------------------
# Runge approximation


@dataclass(frozen=True)
class RungeRequest:
    """Target on Omega x (-T, T), exterior control basis, Tikhonov weight."""

    target: Field
    controls: ExteriorBasis
    tikhonov: float

    def __post_init__(self):
        if self.tikhonov <= 0:
            raise ValueError("Tikhonov weight must be positive")


def runge_approximate(request: RungeRequest, problem: PolyParabolicProblem) -> dict:
    """Least-squares fit of the target by interior traces of exterior solutions.

    Minimizes ||sum_i c_i u_{b_i} - target||^2_{L2(Omega_T, weighted)} +
    eps ||c||^2 over the control span, using one forward solve per control
    and normal equations on the solution bank.  Returns the datum, its
    coefficients, the achieved relative error, and the error history over
    nested control prefixes (provably nonincreasing in the regularized
    objective, and monitored on the error itself).
    """
    grid = problem.grid
    if request.target.grid != grid or request.controls.grid != grid:
        raise ValueError("grid mismatch")
    mask = problem.partition.interior_spacetime_mask()
    scale = max(1.0, float(np.abs(request.target.values).max()))
    if np.abs(request.target.values[~mask]).max(initial=0.0) > 1e-13 * scale:
        raise ValueError("target must be supported in Omega x (-T, T)")

    sqw = np.sqrt(grid.cell_volume * np.broadcast_to(problem.metric.sqrt_det,
                                                     grid.field_shape)[mask].real)
    system = assemble_system(problem)
    system.factor()
    n = len(request.controls)
    bank = np.empty((n, int(mask.sum())), dtype=np.complex128)
    for i in range(n):
        sol = solve_forward(problem, request.controls.field(i), system=system)
        bank[i] = sol.u.values[mask] * sqw
    phi = request.target.values[mask] * sqw
    phi_norm = np.linalg.norm(phi)

    gram = bank.conj() @ bank.T
    # Tikhonov weight is relative to the Gram spectral norm
    eps = request.tikhonov * float(
        scipy.linalg.eigh(gram, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0].real
    )
    proj = bank.conj() @ phi
    errors = []
    coeffs = None
    for k in range(1, n + 1):
        gk = gram[:k, :k] + eps * np.eye(k)
        ck = scipy.linalg.solve(gk, proj[:k], assume_a="pos", check_finite=False)
        resid = phi - bank[:k].T @ ck
        errors.append(float(np.linalg.norm(resid) / phi_norm) if phi_norm > 0 else 0.0)
        coeffs = ck
    f = request.controls.combine(coeffs)
    return {
        "datum": f,
        "coefficients": coeffs,
        "tikhonov_absolute": float(eps),
        "achieved_error": errors[-1],
        "error_history": errors,
    }


# ---------------------------------------------------------------------------
# Potential reconstruction


@dataclass(frozen=True)
class ReconstructionConfig:
    """Measured DN data and knobs for the Born-plus-refinement inversion.

    ``tikhonov`` is relative to the spectral norm of the linearized design
    matrix; ``sampling_mask`` optionally restricts the estimated nodes to a
    subset of Omega x (-T, T); ``noise_sigma`` adds seeded Gaussian noise to
    the measured entries (off by default).
    """

    measured: DNMatrix
    tikhonov: float = 1e-3
    max_iterations: int = 3
    sampling_mask: np.ndarray | None = None
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.tikhonov <= 0:
            raise ValueError("Tikhonov weight must be positive")
        if self.max_iterations < 1:
            raise ValueError("need at least one iteration (the Born step)")


def _solution_bank(problem: PolyParabolicProblem, basis: ExteriorBasis,
                   nodes: tuple[np.ndarray, np.ndarray], adjoint: bool) -> np.ndarray:
    tt, xx = nodes
    system = assemble_system(problem, adjoint=adjoint)
    system.factor()
    solve = solve_adjoint if adjoint else solve_forward
    bank = np.empty((len(basis), len(tt)), dtype=np.complex128)
    for i in range(len(basis)):
        sol = solve(problem, basis.field(i), system=system)
        bank[i] = sol.u.values.reshape(problem.grid.time_points, -1)[tt, xx]
    return bank


def reconstruct_potential(config: ReconstructionConfig,
                          baseline: PolyParabolicProblem) -> dict:
    """Recover V - V0 on the interior nodes from measured minus baseline DN data.

    The Born step solves the Tikhonov-regularized linearization with both
    solution banks at the baseline potential; each refinement recomputes the
    forward bank at the current estimate (the identity is exact in that
    argument) and re-solves.  Zero DN difference returns the baseline
    potential exactly.
    """
    measured = config.measured
    if measured.adjoint:
        raise ValueError("measured DN matrix must be the forward map")
    if measured.geometry != geometry_fingerprint(baseline):
        raise ValueError("fingerprint mismatch: measured DN does not match baseline geometry")
    grid = baseline.grid
    exc, tst = measured.excitations, measured.tests

    tt, xx = interior_nodes(baseline.partition)
    if config.sampling_mask is not None:
        flat = np.asarray(config.sampling_mask, dtype=bool).reshape(grid.time_points, -1)
        keep = flat[tt, xx]
        tt, xx = tt[keep], xx[keep]
        if len(tt) == 0:
            raise ValueError("sampling mask selects no interior nodes")

    base_dn = assemble_dn_map(baseline, exc, tst)
    data_entries = measured.entries
    if config.noise_sigma > 0:
        rng = np.random.default_rng(config.seed)
        scale = config.noise_sigma * np.abs(data_entries).max()
        data_entries = data_entries + scale * (
            rng.standard_normal(data_entries.shape)
            + 1j * rng.standard_normal(data_entries.shape)
        )
    d = (data_entries - base_dn.entries).ravel()

    w_node = grid.cell_volume * baseline.metric.sqrt_det.ravel()[xx]
    z_bank = _solution_bank(baseline, tst, (tt, xx), adjoint=True)
    u_bank = _solution_bank(baseline, exc, (tt, xx), adjoint=False)

    history = []
    est_vals = baseline.potential.copy()
    alpha = None
    for iteration in range(config.max_iterations):
        design = (np.conj(z_bank)[:, None, :] * u_bank[None, :, :] * w_node).reshape(
            -1, len(tt)
        )
        gram = design.conj().T @ design
        if alpha is None:
            norm_sq = float(scipy.linalg.eigh(gram, eigvals_only=True,
                                              subset_by_index=[len(tt) - 1, len(tt) - 1])[0])
            alpha = config.tikhonov * np.sqrt(max(norm_sq, 0.0))
        q = scipy.linalg.solve(gram + alpha**2 * np.eye(len(tt)),
                               design.conj().T @ d, assume_a="pos", check_finite=False)
        d_norm = np.linalg.norm(d)
        history.append(float(np.linalg.norm(design @ q - d) / d_norm) if d_norm > 0 else 0.0)
        est_vals = baseline.potential.copy()
        est_vals.reshape(grid.time_points, -1)[tt, xx] += q
        if iteration + 1 < config.max_iterations:
            if len(history) >= 2 and history[-1] >= history[-2] * (1.0 - 1e-10):
                break  # residual stagnated
            refreshed = make_problem(
                grid, baseline.partition, baseline.exponents, baseline.weights,
                potential=est_vals, metric=baseline.metric, calc=baseline.calc,
            )
            u_bank = _solution_bank(refreshed, exc, (tt, xx), adjoint=False)
    estimate = make_field(grid, est_vals)
    return {
        "potential": estimate,
        "residual_history": history,
        "tikhonov": float(alpha),
        "iterations": len(history),
    }


# ---------------------------------------------------------------------------
# Moment functionals and entanglement probes


def _fit_decay(nodes: np.ndarray, samples: np.ndarray, split_a: float) -> dict:
    """Fit the two-sided decay template; deltas near zero flag violations."""
    mags = np.abs(samples)
    head = nodes <= split_a
    tail = nodes > split_a
    out = {"origin_delta": np.inf, "origin_c": 0.0, "tail_delta": np.inf, "tail_c": 0.0}
    hm, hn = mags[head], nodes[head]
    live = hm > _DECAY_FLOOR
    if live.any():
        # ln|f| ~ ln c - delta / tau on the near-origin side
        x = 1.0 / hn[live]
        y = np.log(hm[live])
        slope, intercept = np.polyfit(x, y, 1)
        out["origin_delta"] = -float(slope)
        out["origin_c"] = float(np.exp(intercept))
    tm, tn = mags[tail], nodes[tail]
    live = tm > _DECAY_FLOOR
    if live.any():
        slope, intercept = np.polyfit(tn[live], np.log(tm[live]), 1)
        out["tail_delta"] = -float(slope)
        out["tail_c"] = float(np.exp(intercept))
    return out


@dataclass(frozen=True)
class MomentTestCase:
    """Exponents, sampled profiles on the tau grid, and the moment range.

    ``decay`` holds fitted (c, delta) pairs per profile and side; strict
    construction rejects profiles violating the two-sided exponential decay
    template needed for all moments to converge.
    """

    exponents: tuple
    rule: QuadratureRule
    samples: np.ndarray
    moment_range: tuple
    decay: tuple
    nonresonant: bool


def exponents_nonresonant(exponents) -> bool:
    """True when no pairwise difference of exponents is an integer."""
    arr = np.asarray(exponents, dtype=float)
    for i in range(len(arr)):
        for j in range(i + 1, len(arr)):
            d = arr[i] - arr[j]
            if abs(d - round(d)) < _NONRESONANCE_TOL:
                return False
    return True


def make_moment_case(
    exponents,
    profiles,
    rule: QuadratureRule,
    moment_range: tuple[int, int] = (0, 8),
    strict: bool = True,
) -> MomentTestCase:
    """Sample callables on the rule nodes and fit the decay template.

    With ``strict`` (the default) a template violation raises; pass
    strict=False to build deliberately invalid cases whose moment calls
    must then fail with :class:`DivergenceError`.
    """
    exponents = tuple(float(a) for a in exponents)
    for a in exponents:
        frac_exponent(a)
    if len(profiles) != len(exponents):
        raise ValueError("one profile per exponent")
    lo, hi = moment_range
    if lo < 0 or hi < lo:
        raise ValueError(f"bad moment range {moment_range}")
    samples = np.stack([np.asarray(p(rule.nodes), dtype=np.complex128) for p in profiles])
    decay = tuple(_fit_decay(rule.nodes, row, rule.split_a) for row in samples)
    if strict:
        for k, fit in enumerate(decay):
            if not (fit["origin_delta"] > 1e-6 and fit["tail_delta"] > 1e-6):
                raise ValueError(
                    f"profile {k} violates the decay template "
                    f"(origin delta {fit['origin_delta']:.3g}, "
                    f"tail delta {fit['tail_delta']:.3g})"
                )
    return MomentTestCase(
        exponents=exponents, rule=rule, samples=samples,
        moment_range=(int(lo), int(hi)), decay=decay,
        nonresonant=exponents_nonresonant(exponents),
    )


def moment_functional(case: MomentTestCase, m: int) -> complex:
    """sum_k Gamma(m + 1 + alpha_k) * int_0^inf f_k(tau) tau^(-m) dtau.

    Raises
    ------
    DivergenceError
        If m >= 1 and a profile lacks the near-origin decay that makes
        tau^(-m) integrable against it.
    """
    lo, _ = case.moment_range
    if m < lo:
        raise ValueError(f"moment order {m} below the declared range start {lo}")
    if m >= 1:
        for k, fit in enumerate(case.decay):
            if not fit["origin_delta"] > 1e-6:
                raise DivergenceError(
                    f"divergence detected: profile {k} decays too slowly near tau = 0 "
                    f"for moment order {m}"
                )
    tau_pow = case.rule.nodes ** (-float(m))
    total = 0.0 + 0.0j
    for alpha, row in zip(case.exponents, case.samples):
        integral = np.sum(case.rule.weights * row * tau_pow)
        total += gamma_fn(m + 1 + alpha) * integral
    return complex(total)


def moment_residual_vector(case: MomentTestCase) -> np.ndarray:
    lo, hi = case.moment_range
    return np.array([abs(moment_functional(case, m)) for m in range(lo, hi + 1)])


def resonant_counterexample(
    calc,
    partition: GeometryPartition,
    region,
    alpha: float,
    m: int,
    u1: Field,
) -> dict:
    """Exact cancellation witness for integer-shifted exponents.

    With alpha_1 = alpha + m and alpha_2 = alpha, setting
    u2 := -(d/dt - Lap_g)^m u1 makes H^{alpha_1} u1 + H^{alpha_2} u2 vanish
    identically (the integer power is local, so u2 also vanishes on the
    observation set).  Returns the relative residual on region x (-T, T)
    and both component norms.

    Raises
    ------
    ValueError
        If u1 fails its vanishing preconditions or is identically zero.
    """
    grid = calc.grid
    if u1.grid != grid:
        raise ValueError("grid mismatch")
    frac_exponent(alpha)
    if m < 1 or m != int(m):
        raise ValueError(f"integer shift m must be a positive integer, got {m}")
    if isinstance(region, str):
        obs_mask = partition.region_spacetime_mask(region)
    else:
        obs_mask = np.zeros(grid.field_shape, dtype=bool)
        obs_mask[partition.time_slice] = np.asarray(region, dtype=bool)
    scale = float(np.abs(u1.values).max())
    if scale == 0.0:
        raise ValueError("u1 must be nonzero away from the observation set")
    if np.abs(u1.values[obs_mask]).max(initial=0.0) > 1e-13 * scale:
        raise ValueError("u1 must vanish on the observation set")
    t = grid.time_coordinates()
    early = t <= -grid.physical_half_window + 1e-12
    if np.abs(u1.values[early]).max(initial=0.0) > 1e-13 * scale:
        raise ValueError("u1 must vanish for t <= -T")

    u2 = make_field(grid, -apply_integer_power(calc, u1, int(m)).values)
    total = apply_frac_power(calc, u1, alpha + m).values \
        + apply_frac_power(calc, u2, alpha).values
    cell = grid.cell_volume
    resid = float(np.sqrt(cell * np.sum(np.abs(total[obs_mask]) ** 2)))
    n1 = float(np.sqrt(cell * np.sum(np.abs(u1.values) ** 2)))
    n2 = float(np.sqrt(cell * np.sum(np.abs(u2.values) ** 2)))
    return {
        "residual_on_region": resid,
        "relative_residual": resid / (n1 + n2),
        "norm_u1": n1,
        "norm_u2": n2,
    }


def entanglement_probe(
    exponents,
    rule: QuadratureRule,
    moment_range: tuple[int, int] = (0, 6),
    n_random: int = 32,
    seed: int = 0,
    coefficient_families=None,
) -> dict:
    """Falsification harness for the moment-vanishing (entanglement) property.

    For nonresonant exponents, every tested nonzero profile family built on
    the reference super-exponentially decaying profile leaves at least one
    Gamma-weighted moment visibly nonzero.  The family contains an
    adversarial member tuned to kill the first N-1 moments plus seeded
    random members; the report certifies the minimum residual over the
    family is strictly positive.

    Raises
    ------
    ValueError
        For resonant exponents (integer-shifted powers admit exact
        cancellation; see :func:`resonant_counterexample`).
    """
    exponents = tuple(float(a) for a in exponents)
    for a in exponents:
        frac_exponent(a)
    if not exponents_nonresonant(exponents):
        raise ValueError(
            "resonant exponents (integer pairwise difference); the entanglement "
            "principle fails there, see resonant_counterexample"
        )
    n = len(exponents)
    lo, hi = moment_range
    if hi - lo + 1 < n:
        raise ValueError("moment range must cover at least one order per exponent")

    base = np.exp(-rule.nodes - 1.0 / rule.nodes)
    base_norm = np.sqrt(np.sum(rule.weights * np.abs(base) ** 2))
    moments = np.array([np.sum(rule.weights * base * rule.nodes ** (-float(m)))
                        for m in range(lo, hi + 1)])
    # weight matrix W[m_idx, k] = Gamma(m + 1 + alpha_k) * J_m
    worders = np.arange(lo, hi + 1)
    gam = np.array([[gamma_fn(m + 1 + a) for a in exponents] for m in worders])
    design = gam * moments[:, None]

    families = []
    if coefficient_families is not None:
        families.extend(np.asarray(c, dtype=np.complex128) for c in coefficient_families)
    else:
        # adversarial member: kill moments lo .. lo + n - 2 exactly
        if n >= 2:
            sub = design[: n - 1, :]
            null = scipy.linalg.null_space(sub)
            for col in range(null.shape[1]):
                families.append(null[:, col])
        else:
            families.append(np.ones(1, dtype=np.complex128))
        rng = np.random.default_rng(seed)
        draws = rng.standard_normal((n_random, n)) + 1j * rng.standard_normal((n_random, n))
        families.extend(draws)

    results = []
    for coeffs in families:
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape != (n,):
            raise ValueError("coefficient vectors must have one entry per exponent")
        norm = np.abs(coeffs).max() * base_norm
        if norm == 0:
            continue  # excluded by the nonzero normalization
        coeffs = coeffs / norm  # max_k ||f_k||_L2(tau) = 1
        residual_vec = np.abs(design @ coeffs)
        results.append({
            "coefficients": [complex(c) for c in coeffs],
            "residuals": residual_vec.tolist(),
            "residual_norm": float(np.linalg.norm(residual_vec)),
        })
    if not results:
        raise ValueError("no nonzero candidate families supplied")
    min_norm = min(r["residual_norm"] for r in results)
    return {
        "exponents": list(exponents),
        "moment_range": [int(lo), int(hi)],
        "n_families": len(results),
        "min_residual_norm": float(min_norm),
        "certified_positive": bool(min_norm > 0.0),
        "families": results,
    }
