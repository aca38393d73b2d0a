"""Slow-manifold refinement toolkit for two-time-scale systems.

The package computes increasingly accurate representations of the slow
manifold of a fast-slow vector field three ways: iterative basis refinement
(full and one-step variants), a spectral-subspace construction, and the
direct series expansion of the invariance equation. Experiment drivers
measure how fast each one closes in on the invariant manifold as the
time-scale ratio shrinks.
"""

from .numerics import (
    ConfigError,
    ConvergenceError,
    DomainError,
    FdConfig,
    InsufficientDataError,
    NewtonConfig,
    OrderFit,
    SingularMatrixError,
    SpectralGapError,
    StiffnessError,
    ToolkitError,
    fit_order,
    series_coefficient,
)
from .fastslow import (
    ExpansionCoeffs,
    FastSlowSystem,
    Trajectory,
    builtin_system,
    expansion_coeffs,
    expansion_h1,
    expansion_h2,
    integrate,
    invariance_residual,
    linear_system,
    mmh_system,
    quad_system,
    series_eval,
    stacked_field,
    stacked_jacobian,
)
from .csp import (
    BlockBasis,
    CspChain,
    LambdaBlocks,
    TransitionMatrix,
    initial_basis,
    lambda_assemble,
    lie_bracket_check,
    refine,
    transition_matrix,
    update_matrices,
)
from .ildm import IldmResult, SchurSplit, degraded_chain, ildm_solve, schur_ordered
from .experiments import (
    ExperimentConfig,
    OutputConfig,
    ResultRow,
    RunReport,
    SystemConfig,
    TrajectoryConfig,
    run_compare,
    run_converge,
    run_trajectory,
)
from .selftest import CheckResult, SelftestReport, run_selftest

__version__ = "0.1.0"

__all__ = [
    "BlockBasis",
    "CheckResult",
    "ConfigError",
    "ConvergenceError",
    "CspChain",
    "DomainError",
    "ExpansionCoeffs",
    "ExperimentConfig",
    "FastSlowSystem",
    "FdConfig",
    "IldmResult",
    "InsufficientDataError",
    "LambdaBlocks",
    "NewtonConfig",
    "OrderFit",
    "OutputConfig",
    "ResultRow",
    "RunReport",
    "SchurSplit",
    "SelftestReport",
    "SingularMatrixError",
    "SpectralGapError",
    "StiffnessError",
    "SystemConfig",
    "ToolkitError",
    "Trajectory",
    "TrajectoryConfig",
    "TransitionMatrix",
    "builtin_system",
    "degraded_chain",
    "expansion_coeffs",
    "expansion_h1",
    "expansion_h2",
    "fit_order",
    "ildm_solve",
    "initial_basis",
    "integrate",
    "invariance_residual",
    "lambda_assemble",
    "lie_bracket_check",
    "linear_system",
    "mmh_system",
    "quad_system",
    "refine",
    "run_compare",
    "run_converge",
    "run_selftest",
    "run_trajectory",
    "schur_ordered",
    "series_coefficient",
    "series_eval",
    "stacked_field",
    "stacked_jacobian",
    "transition_matrix",
    "update_matrices",
    "__version__",
]
