"""Finite-difference reference Jacobians and comparison metrics."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import BranchJump, SolverFailure, ZeroReference
from .model import ParametricNlp, PrimalDualPoint
from .sensitivity import Method, SensitivityResult
from .sqp import SolverOptions, solve

__all__ = ["FdOptions", "ComparisonMetrics", "finite_difference_jacobian", "compare", "fd_solver_options"]


@dataclass(frozen=True)
class FdOptions:
    """Perturbation settings.

    A perturbed solution farther than
    ``trust_factor * step * (1 + ||x||_inf)`` (infinity norm) from the nominal
    one is treated as a jump to another local minimizer.
    """

    step: float = 1e-5
    scheme: str = "central"
    warm_start: bool = True
    trust_factor: float = 10.0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.scheme not in ("central", "forward"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.trust_factor > 0:
            raise ValueError("trust_factor must be positive")


@dataclass(frozen=True)
class ComparisonMetrics:
    relative_error_inf: float
    cosine_similarity: float


def fd_solver_options(options: SolverOptions, step: float) -> SolverOptions:
    """Tighten the KKT tolerance so that solve errors stay well below the step."""
    tol = min(options.kkt_tolerance, max(1e-3 * step, 1e-12))
    return replace(options, kkt_tolerance=tol)


def finite_difference_jacobian(
    nlp: ParametricNlp,
    pt: PrimalDualPoint,
    options: FdOptions = FdOptions(),
    solver_options: SolverOptions = SolverOptions(),
) -> SensitivityResult:
    """Jacobian of ``x(theta)`` from re-solves at perturbed parameters."""
    sopts = fd_solver_options(solver_options, options.step)
    theta = pt.theta
    radius = options.trust_factor * options.step * (1.0 + float(np.abs(pt.x).max(initial=0.0)))

    def resolve(th):
        init = pt if options.warm_start else None
        sol, trace = solve(nlp, th, init=init, options=sopts)
        if not trace.converged:
            raise SolverFailure(
                f"perturbed solve at theta={th.tolist()} ended with {trace.status.value} "
                f"(residual {trace.final_kkt_residual:.2e})"
            )
        jump = float(np.abs(sol.x - pt.x).max(initial=0.0))
        if jump > radius:
            raise BranchJump(f"perturbed solution moved {jump:.3e} > trust radius {radius:.3e}")
        return sol.x

    if options.scheme == "forward":
        base_sol, trace = solve(nlp, theta, init=pt, options=sopts)
        if not trace.converged:
            raise SolverFailure("nominal re-solve failed")
        base = base_sol.x
    jac = np.zeros((nlp.n_x, nlp.n_theta))
    for k in range(nlp.n_theta):
        e = np.zeros(nlp.n_theta)
        e[k] = options.step
        if options.scheme == "central":
            jac[:, k] = (resolve(theta + e) - resolve(theta - e)) / (2.0 * options.step)
        else:
            jac[:, k] = (resolve(theta + e) - base) / options.step
    return SensitivityResult(dx_dtheta=jac, method=Method("finite_difference", options.step))


def _matrix(j) -> np.ndarray:
    if isinstance(j, SensitivityResult):
        j = j.dx_dtheta
    j = np.asarray(j, dtype=float)
    return j.reshape(-1, 1) if j.ndim == 1 else j


def _unit(j: np.ndarray) -> np.ndarray:
    # Scale by the largest entry first so the 2-norm cannot under/overflow.
    j = j / np.abs(j).max()
    return j / np.linalg.norm(j)


def compare(candidate, reference) -> ComparisonMetrics:
    """Relative induced infinity-norm error and cosine similarity of flattened Jacobians.

    Accepts :class:`SensitivityResult` objects or arrays.  The reference
    supplies the denominator of the relative error.
    """
    a, b = _matrix(candidate), _matrix(reference)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    ref_norm = float(np.linalg.norm(b, np.inf))
    if ref_norm == 0.0:
        raise ZeroReference("reference Jacobian is zero")
    rel = float(np.linalg.norm(a - b, np.inf)) / ref_norm
    cos = 0.0 if not np.any(a) else float(np.clip(np.vdot(_unit(a), _unit(b)), -1.0, 1.0))
    return ComparisonMetrics(relative_error_inf=rel, cosine_similarity=cos)
