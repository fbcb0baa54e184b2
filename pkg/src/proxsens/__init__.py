"""Sensitivity of parametric nonlinear programs through a proximal surrogate system."""

from .errors import (
    BoundInapplicable,
    BranchJump,
    ConfigError,
    DimensionMismatch,
    EvaluatorFailure,
    InfeasiblePoint,
    IoError,
    NonPositiveRho,
    ProxSensError,
    SingularKktMatrix,
    SolverFailure,
)
from .model import (
    ActiveSetPartition,
    Derivatives,
    KktEvaluation,
    ParametricNlp,
    PrimalDualPoint,
    check_regularity,
    detect_active_set,
    evaluate_kkt,
)
from .oracle import ComparisonMetrics, FdOptions, compare, finite_difference_jacobian
from .report import ExperimentReport, ReportRow, emit_report
from .sensitivity import (
    LiftedPoint,
    SensitivityResult,
    classical_jacobian,
    kkt_p2_residual,
    least_squares_jacobian,
    lift_to_slack,
    predict_solution,
    surrogate_jacobian,
    theorem1_constants,
)
from .sqp import SolverOptions, SolveStatus, SolveTrace, resolve_perturbed, solve

__version__ = "0.1.0"

__all__ = [
    "BoundInapplicable",
    "BranchJump",
    "ConfigError",
    "DimensionMismatch",
    "EvaluatorFailure",
    "InfeasiblePoint",
    "IoError",
    "NonPositiveRho",
    "ProxSensError",
    "SingularKktMatrix",
    "SolverFailure",
    "ActiveSetPartition",
    "Derivatives",
    "KktEvaluation",
    "ParametricNlp",
    "PrimalDualPoint",
    "check_regularity",
    "detect_active_set",
    "evaluate_kkt",
    "ComparisonMetrics",
    "FdOptions",
    "compare",
    "finite_difference_jacobian",
    "ExperimentReport",
    "ReportRow",
    "emit_report",
    "LiftedPoint",
    "SensitivityResult",
    "classical_jacobian",
    "kkt_p2_residual",
    "least_squares_jacobian",
    "lift_to_slack",
    "predict_solution",
    "surrogate_jacobian",
    "theorem1_constants",
    "SolverOptions",
    "SolveStatus",
    "SolveTrace",
    "resolve_perturbed",
    "solve",
]
