"""Exception and warning types raised across the package."""

import numpy as np


class ProxSensError(Exception):
    """Base class for package errors."""


class DimensionMismatch(ProxSensError, ValueError):
    pass


class EvaluatorFailure(ProxSensError, RuntimeError):
    """An evaluator returned non-finite output."""


class RankDeficientBasis(ProxSensError, RuntimeError):
    pass


class SingularKktMatrix(ProxSensError, np.linalg.LinAlgError):
    """The classical KKT matrix is singular; use the surrogate system instead."""


class InfeasiblePoint(ProxSensError, ValueError):
    pass


class NonPositiveRho(ProxSensError, ValueError):
    pass


class NonPositiveAlpha(ProxSensError, ValueError):
    pass


class BoundInapplicable(ProxSensError, ArithmeticError):
    """The smallness condition of the linear-rate bound is violated.

    ``constants`` carries the computed constants (with an infinite coefficient).
    """

    def __init__(self, message: str, constants=None):
        super().__init__(message)
        self.constants = constants


class MissingDualSensitivities(ProxSensError, ValueError):
    pass


class ZeroReference(ProxSensError, ZeroDivisionError):
    pass


class BranchJump(ProxSensError, RuntimeError):
    """A perturbed re-solve converged to a distant local minimizer."""


class SolverFailure(ProxSensError, RuntimeError):
    def __init__(self, message: str, time_index: int | None = None):
        super().__init__(message)
        self.time_index = time_index


class ConfigError(ProxSensError, ValueError):
    pass


class IllConditionedWarning(UserWarning):
    pass


class IoError(ProxSensError, OSError):
    """A report or config file could not be read or written."""
