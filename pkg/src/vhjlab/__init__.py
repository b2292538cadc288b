"""Numerical laboratory for the 1D superquadratic viscous Hamilton-Jacobi
equation: gradient blow-up, loss of boundary conditions, regularization,
bouncing, and critical-parameter searches at desk scale."""

from .core import (
    AnalyticConstants1D,
    Params,
    TruncationLevel,
    TruncationVariant,
    control_constants,
    cost_normalization,
    regular_steady,
    regular_steady_deriv,
    singular_steady,
    singular_steady_deriv,
    truncated_nonlinearity,
    truncated_nonlinearity_deriv,
)
from .grid import Field, Grading, Grid, make_grid
from .solver import (
    SolveConfig,
    Trajectory,
    boundary_trace,
    evolve_truncated,
    gradient_singularity_indicator,
    viscosity_solve,
)

__version__ = "0.1.0"
