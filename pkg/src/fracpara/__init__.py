"""Fractional space-time parabolic operators on periodic grids.

The package provides the operator sum(b_k * (d/dt - Lap_g)^{s_k}) + V on a
space-time torus, a Galerkin solver for its initial-exterior value problem,
exterior Dirichlet-to-Neumann matrices, Tikhonov-regularized potential
reconstruction, and numerical probes of moment-vanishing (entanglement)
properties of distinct fractional powers.
"""

from fracpara.grid import (
    Field,
    GeometryPartition,
    MetricField,
    SpaceTimeGrid,
    identity_metric,
    l2_inner_product,
    make_grid,
    make_partition,
    metric_from_values,
)
from fracpara.fieldio import read_field, read_partition, write_field, write_partition
from fracpara.operators import (
    FourierCalculus,
    SpectralDecomposition,
    apply_frac_power,
    apply_heat_semigroup,
    apply_integer_power,
    assemble_laplace_beltrami,
    fourier_calculus,
    frac_exponent,
    principal_power,
    sobolev_norm,
)
from fracpara.quadrature import (
    QuadratureRule,
    frac_power_balakrishnan_symbol,
    frac_power_kernel_quadrature,
    make_quadrature_rule,
)
from fracpara.forward import (
    GalerkinSystem,
    PolyParabolicProblem,
    Solution,
    assemble_system,
    coercivity_margin,
    eigenvalue_condition_check,
    solve_adjoint,
    solve_forward,
)
from fracpara.dnmap import (
    DNMatrix,
    ExteriorBasis,
    assemble_dn_map,
    dn_pairing,
    integral_identity_residual,
    make_exterior_basis,
    read_dn_matrix,
    write_dn_matrix,
)
from fracpara.inverse import (
    MomentTestCase,
    ReconstructionConfig,
    RungeRequest,
    entanglement_probe,
    moment_functional,
    reconstruct_potential,
    resonant_counterexample,
    runge_approximate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
