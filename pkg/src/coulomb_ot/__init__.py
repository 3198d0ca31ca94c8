"""Optimal transport with the repulsive Coulomb cost: solvers, potentials, diagnostics."""

from .cost import CostDomainError, CostModel, SingularHessianError, c_exponential
from .diagnostics import DiagnosticsConfig, DiagnosticsReport, diagnose, support_gap
from .duality import PotentialPair, c_transform, ruschendorf_potentials
from .measures import (
    DensitySpec,
    DiscreteMeasure,
    discretize,
    discretize_quantiles,
    modulus_abs_continuity,
    nonconcentration_radius,
)
from .reference import brute_force_assignment, radial_reduction_oracle, uniform_1d_map
from .solver import InfeasibleError, Plan, SolveReport, solve_entropic, solve_lp, verify_c_monotonicity

__all__ = [
    "CostDomainError",
    "CostModel",
    "DensitySpec",
    "DiagnosticsConfig",
    "DiagnosticsReport",
    "DiscreteMeasure",
    "InfeasibleError",
    "Plan",
    "PotentialPair",
    "SingularHessianError",
    "SolveReport",
    "brute_force_assignment",
    "c_exponential",
    "c_transform",
    "diagnose",
    "discretize",
    "discretize_quantiles",
    "modulus_abs_continuity",
    "nonconcentration_radius",
    "radial_reduction_oracle",
    "ruschendorf_potentials",
    "solve_entropic",
    "solve_lp",
    "support_gap",
    "uniform_1d_map",
    "verify_c_monotonicity",
]

__version__ = "0.1.0"
