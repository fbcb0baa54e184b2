"""Grid search over the proximal parameter on a single problem instance."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigError
from ..model import ParametricNlp, PrimalDualPoint
from ..oracle import FdOptions, compare, finite_difference_jacobian
from ..report import ExperimentReport, ReportRow
from ..sensitivity import least_squares_jacobian, lift_to_slack, surrogate_jacobian_lifted
from ..sqp import SolverOptions

__all__ = ["log_grid", "validate_grid", "rho_grid_search", "jacobian_for_rho"]


def log_grid(start: float, stop: float, count: int) -> list[float]:
    """``count`` log-spaced values from ``start`` to ``stop`` inclusive."""
    if count < 1 or not (start > 0 and stop > 0):
        raise ConfigError("log grid needs positive bounds and count >= 1")
    if count == 1:
        return [float(start)]
    return [float(v) for v in np.logspace(np.log10(start), np.log10(stop), int(count))]


def validate_grid(grid: Sequence[float]) -> list[float]:
    grid = [float(r) for r in grid]
    if not grid:
        raise ConfigError("rho grid is empty")
    if any(not np.isfinite(r) or r < 0 for r in grid):
        raise ConfigError("rho grid entries must be finite and nonnegative")
    return grid


def jacobian_for_rho(nlp: ParametricNlp, pt: PrimalDualPoint, rho: float, lifted=None) -> np.ndarray:
    """Surrogate Jacobian for ``rho > 0``; least squares on the classical system for ``rho = 0``."""
    if rho == 0.0:
        return least_squares_jacobian(nlp, pt).dx_dtheta
    if lifted is None:
        lifted = lift_to_slack(nlp, pt)
    return surrogate_jacobian_lifted(nlp, lifted, rho).dx_dtheta


def rho_grid_search(
    problem: ParametricNlp,
    pt: PrimalDualPoint,
    grid: Sequence[float],
    fd: FdOptions = FdOptions(),
    solver_options: SolverOptions = SolverOptions(),
    rows=None,
    columns=None,
    metadata: dict | None = None,
) -> ExperimentReport:
    """Compare the derivative at each grid value against one finite-difference reference.

    ``rows`` and ``columns`` select the entries of ``dx/dtheta`` that enter the
    comparison (all by default).
    """
    grid = validate_grid(grid)
    reference = finite_difference_jacobian(problem, pt, fd, solver_options).dx_dtheta
    r = slice(None) if rows is None else np.asarray(rows)
    c = slice(None) if columns is None else np.asarray(columns)
    reference = reference[r][:, c]
    lifted = lift_to_slack(problem, pt)
    out = []
    for rho in grid:
        metrics = compare(jacobian_for_rho(problem, pt, rho, lifted)[r][:, c], reference)
        out.append(ReportRow(rho, metrics.relative_error_inf, metrics.cosine_similarity))
    meta = {"problem": problem.name, "fd_step": fd.step, "fd_scheme": fd.scheme, "theta": pt.theta.tolist()}
    meta.update(metadata or {})
    return ExperimentReport(tuple(out), meta)
