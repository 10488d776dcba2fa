"""Perturbative expansion of homogenized coefficients for random conductances.

Bernoulli perturbations of i.i.d. conductances on the periodic lattice
``{-n, ..., n}^d``: periodic cell problems, single- and several-edge
corrector identities, and Monte Carlo estimators of ``xi . A_hom xi`` and of
its first-order coefficient in the perturbation probability.
"""

from .corrector import (
    CorrectorSolution,
    MultiEdgeResidual,
    corrector,
    corrector_residual,
    dipole_response,
    linear_approximation,
    multi_edge_residual,
    periodic_corrector,
    periodic_single_edge_delta,
    regularized_corrector,
    single_edge_delta,
)
from .enumeration import exact_a1, exact_ahom, exact_enumeration
from .environment import (
    CoupledEnvironment,
    DefectSet,
    DistributionSpec,
    apply_defects,
    force_edge,
    load_environment,
    realize,
    sample_coupled,
    sample_coupled_cached,
    save_environment,
)
from .homogenize import (
    ExpansionReport,
    MonteCarloEstimate,
    a1_mc,
    a1_series,
    a1_spatial_average,
    a1_total_energy,
    ahom_periodic_mc,
    dilute_bond_coefficient,
    expansion_fit,
    linearization_error_scaling,
    periodic_energy,
)
from .lattice import EdgeId, TorusGeometry
from .solver import SolveReport, SolverConfig, SolverError, dense_solve, solve_mean_zero, solve_regularized

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
