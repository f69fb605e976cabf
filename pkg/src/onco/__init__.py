"""Nonlocal tumor growth with an optimally controlled drug infusion in 1D."""

from .errors import (
    ConfigError,
    LineSearchFailure,
    NonFiniteError,
    OncoError,
    ParseError,
    SolverError,
    StabilityError,
    UsageError,
    ValidationError,
)
from .forward import (
    ControlProfile,
    Trajectory,
    cost,
    initial_drug,
    initial_tumor,
    solve_forward,
    step,
    tumor_mass,
)
from .grid import Grid, Kernel, build_grid, build_kernel, convolve, quadrature
from .model import ModelParams, partials
from .optimize import (
    AdjointPair,
    OptimizeReport,
    gradient_check,
    initial_guess,
    optimize,
    project,
    reduced_gradient,
    solve_adjoint,
)

__version__ = "0.1.0"

__all__ = [
    "AdjointPair",
    "ConfigError",
    "ControlProfile",
    "Grid",
    "Kernel",
    "LineSearchFailure",
    "ModelParams",
    "NonFiniteError",
    "OncoError",
    "OptimizeReport",
    "ParseError",
    "SolverError",
    "StabilityError",
    "Trajectory",
    "UsageError",
    "ValidationError",
    "build_grid",
    "build_kernel",
    "convolve",
    "cost",
    "gradient_check",
    "initial_drug",
    "initial_guess",
    "initial_tumor",
    "optimize",
    "partials",
    "project",
    "quadrature",
    "reduced_gradient",
    "solve_adjoint",
    "solve_forward",
    "step",
    "tumor_mass",
]
