"""Monotone explicit finite-difference solver for fully nonlinear parabolic
equations in ersatz form, with estimate measurement and a config-driven CLI."""

__version__ = "0.1.0"

from .errors import ErsatzError, NumericalError, ValidationError
from .estimates import (
    EstimateReport,
    interpolation_inequality_check,
    max_principle_check,
    measure,
    refinement_boundedness,
)
from .hamiltonians import (
    ErsatzOperator,
    StencilHamiltonian,
    ersatz_eval,
    from_diffusion,
    make_bellman,
    make_isaacs,
    make_linear,
)
from .pucci import EllipticityParams, decompose_matrix, eval_p, eval_p0, eval_script_p, feasible_hat_delta
from .solver import SolveConfig, Trajectory, h_refine, k_sweep, solve
from .stencil_grid import Domain, Grid, StencilSet, build_grid, build_standard_stencil, build_stencil

__all__ = [
    "Domain",
    "EllipticityParams",
    "ErsatzError",
    "ErsatzOperator",
    "EstimateReport",
    "Grid",
    "NumericalError",
    "SolveConfig",
    "StencilHamiltonian",
    "StencilSet",
    "Trajectory",
    "ValidationError",
    "build_grid",
    "build_standard_stencil",
    "build_stencil",
    "decompose_matrix",
    "ersatz_eval",
    "eval_p",
    "eval_p0",
    "eval_script_p",
    "feasible_hat_delta",
    "from_diffusion",
    "h_refine",
    "interpolation_inequality_check",
    "k_sweep",
    "make_bellman",
    "make_isaacs",
    "make_linear",
    "max_principle_check",
    "measure",
    "refinement_boundedness",
    "solve",
]
