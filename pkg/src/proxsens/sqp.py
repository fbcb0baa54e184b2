"""Line-search SQP with exact Hessians and a dense active-set QP subsolver."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch
from .model import ParametricNlp, PrimalDualPoint, _residual_norms
from .qp import ElasticQp, NonConvexSubproblem, QpStatus

__all__ = [
    "LineSearchOptions",
    "SolverOptions",
    "SolveStatus",
    "SolveTrace",
    "solve",
    "resolve_perturbed",
]


@dataclass(frozen=True)
class LineSearchOptions:
    """Parameters of the backtracking search on the l1 merit function."""

    initial_penalty: float = 1.0
    penalty_margin: float = 1.1
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-10
    second_order_correction: bool = True

    def __post_init__(self):
        if not (0 < self.backtrack < 1 and 0 < self.armijo < 0.5):
            raise ValueError("need 0 < backtrack < 1 and 0 < armijo < 0.5")
        if self.min_step <= 0 or self.initial_penalty <= 0 or self.penalty_margin < 1:
            raise ValueError("invalid line-search parameters")


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 200
    kkt_tolerance: float = 1e-8
    hessian_regularization: float = 1e-8
    max_regularization: float = 1e10
    dual_regularization: float = 1e-8
    max_dual_regularization: float = 1e-2
    stabilization: float = 0.1
    restoration_iterations: int = 200
    line_search: LineSearchOptions = field(default_factory=LineSearchOptions)
    qp_max_pivots: int = 5000
    activity_threshold: float = 1e-8
    # Stop when the residual is within ``acceptable_factor * kkt_tolerance`` and
    # has not halved over ``stall_iterations`` iterations (rounding floor).
    acceptable_factor: float = 10.0
    stall_iterations: int = 5

    def __post_init__(self):
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be positive")
        if self.max_iterations < 1 or self.qp_max_pivots < 1:
            raise ValueError("iteration counts must be >= 1")
        if not self.hessian_regularization > 0:
            raise ValueError("hessian_regularization must be positive")


class SolveStatus(Enum):
    CONVERGED = "converged"
    # Residual within acceptable_factor * kkt_tolerance and no longer decreasing.
    ACCEPTABLE = "acceptable"
    MAX_ITERATIONS = "max_iterations"
    QP_FAILURE = "qp_failure"
    LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass(frozen=True)
class SolveTrace:
    iterations: int
    final_kkt_residual: float
    status: SolveStatus
    residual_log: tuple[float, ...]
    regularization_log: tuple[float, ...] = ()
    step_log: tuple[float, ...] = ()
    message: str = ""
    restorations: int = 0

    @property
    def converged(self) -> bool:
        """True for both ``CONVERGED`` and ``ACCEPTABLE``."""
        return self.status in (SolveStatus.CONVERGED, SolveStatus.ACCEPTABLE)

    def summary(self) -> dict:
        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "final_kkt_residual": self.final_kkt_residual,
            "restorations": self.restorations,
        }


class _Evaluation:
    """Function and first-derivative data at one iterate."""

    __slots__ = ("x", "f", "g", "h", "d")

    def __init__(self, nlp: ParametricNlp, x: np.ndarray, theta: np.ndarray):
        self.x = x
        self.f, self.g, self.h = nlp.values(x, theta)
        self.d = nlp.derivatives_at(x, theta)

    def norms(self, lam, nu):
        return _residual_norms(self.d.grad_f, self.d.jac_g, self.d.jac_h, self.g, self.h, lam, nu)


def _infeasibility(g: np.ndarray, h: np.ndarray) -> float:
    return float(np.abs(h).sum() + np.maximum(g, 0.0).sum())


def _merit(f, g, h, penalty):
    return f + penalty * _infeasibility(g, h)


def _solve_qp(hessian, ev, nu, working_set, options, last_reg, dual=0.0):
    """Solve the QP subproblem with the smallest admissible diagonal Hessian shift.

    The shift is increased until the QP is convex on the null space of its
    final working set (inertia correction).  With ``dual > 0`` the equalities
    are relaxed to ``E d + h = dual (nu+ - nu)`` (stabilized step), which also
    copes with a rank-deficient ``E``.  Returns ``(qp, sol, primal_shift)``,
    or ``None`` when no shift works or ``E`` is singular without stabilization.
    """
    n = hessian.shape[0]
    eye = np.eye(n)
    reg = 0.0
    first = max(options.hessian_regularization, last_reg / 10.0) if last_reg > 0 else options.hessian_regularization
    be = -ev.h - dual * nu
    while reg <= options.max_regularization:
        try:
            qp = ElasticQp(hessian + reg * eye, ev.d.jac_h, ev.d.jac_g, dual_regularization=dual)
            sol = qp.solve(ev.d.grad_f, be, -ev.g, working_set, max_pivots=options.qp_max_pivots)
            return qp, sol, reg
        except NonConvexSubproblem as exc:
            if reg > 0.0 and exc.inertia is not None and exc.inertia.zero > 0:
                return None  # rank-deficient equality Jacobian
        reg = first if reg == 0.0 else 10.0 * reg
    return None


def _least_squares_multipliers(ev: "_Evaluation", lam: np.ndarray) -> np.ndarray:
    """Equality multipliers minimizing the stationarity residual for fixed ``lam``."""
    if ev.h.size == 0:
        return np.zeros(0)
    rhs = -(ev.d.grad_f + ev.d.jac_g.T @ lam)
    nu, *_ = np.linalg.lstsq(ev.d.jac_h.T, rhs, rcond=1e-10)
    return nu


def _restore(nlp, ev: "_Evaluation", theta, options) -> "_Evaluation":
    """Levenberg-Marquardt on ``0.5 ||(h, max(g, 0))||^2``, ignoring the objective.

    Used when the linearized constraints are singular or inconsistent at an
    infeasible iterate.  Returns the last accepted evaluation.
    """
    target = 0.1 * options.kkt_tolerance

    def parts(e):
        viol = np.flatnonzero(e.g > 0)
        r = np.concatenate([e.h, e.g[viol]])
        jac = np.vstack([e.d.jac_h, e.d.jac_g[viol]])
        return r, jac

    r, jac = parts(ev)
    jtj = jac.T @ jac
    damping = 1e-3 * max(float(np.diag(jtj).max(initial=0.0)), 1e-8)
    growth = 2.0
    eye = np.eye(nlp.n_x)
    for _ in range(options.restoration_iterations):
        if np.abs(r).max(initial=0.0) <= target:
            break
        grad = jac.T @ r
        try:
            d = -scipy.linalg.solve(jtj + damping * eye, grad, assume_a="pos")
        except np.linalg.LinAlgError:
            damping *= growth
            growth *= 2.0
            continue
        predicted = -(grad @ d) - 0.5 * float(np.sum((jac @ d) ** 2))
        try:
            trial = _Evaluation(nlp, ev.x + d, theta)
        except Exception:
            trial = None
        if trial is not None:
            r_new, jac_new = parts(trial)
            actual = 0.5 * float(r @ r - r_new @ r_new)
            ratio = actual / predicted if predicted > 0 else -1.0
        else:
            ratio = -1.0
        if ratio > 1e-4:
            ev, r, jac = trial, r_new, jac_new
            jtj = jac.T @ jac
            damping *= max(1.0 / 3.0, 1.0 - (2.0 * ratio - 1.0) ** 3)
            growth = 2.0
        else:
            damping *= growth
            growth *= 2.0
            if damping > 1e20:
                break
    return ev


def solve(
    nlp: ParametricNlp,
    theta,
    init: Optional[PrimalDualPoint] = None,
    options: SolverOptions = SolverOptions(),
    *,
    x0=None,
    working_set=None,
) -> tuple[PrimalDualPoint, SolveTrace]:
    """Find a KKT point of the problem at ``theta``.

    ``init`` warm-starts primal, dual and QP working set; otherwise ``x0`` (or
    the problem's initializer) with zero multipliers is used.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).copy()
    nlp.check_dims(theta=theta)
    if init is not None:
        nlp.check_dims(init.x, None, init.lam, init.nu)
        x, lam, nu = init.x.copy(), init.lam.copy(), init.nu.copy()
    else:
        x = nlp.initial_primal(theta) if x0 is None else np.asarray(x0, dtype=float).copy()
        nlp.check_dims(x=x)
        lam, nu = np.zeros(nlp.n_in), np.zeros(nlp.n_eq)
    lam = np.maximum(lam, 0.0)
    tol = options.kkt_tolerance
    ls = options.line_search

    ev = _Evaluation(nlp, x, theta)
    if working_set is None:
        working_set = tuple(int(i) for i in np.flatnonzero((lam > 0) | (ev.g > -options.activity_threshold)))
    penalty = ls.initial_penalty
    last_reg = 0.0
    restored = False
    restorations = 0
    residuals, regs, steps = [], [], []
    message = ""
    status = SolveStatus.MAX_ITERATIONS

    for iteration in range(options.max_iterations + 1):
        residual = max(ev.norms(lam, nu))
        residuals.append(residual)
        if residual <= tol:
            status = SolveStatus.CONVERGED
            break
        window = residuals[-options.stall_iterations - 1 :]
        if (
            len(window) > options.stall_iterations
            and residual <= options.acceptable_factor * tol
            and min(window[1:]) > 0.5 * window[0]
        ):
            status = SolveStatus.ACCEPTABLE
            message = "residual stalled at rounding level"
            break
        if iteration == options.max_iterations:
            break

        hessian, _ = ev.d.curvature(lam, nu)
        hessian = 0.5 * (hessian + hessian.T)
        step = _solve_qp(hessian, ev, nu, working_set, options, last_reg)
        if step is not None and step[1].status is not QpStatus.OPTIMAL:
            step = None
        dual_reg = 0.0
        if step is None and not restored and _infeasibility(ev.g, ev.h) > tol:
            # Singular or inconsistent linearization: regain feasibility first.
            ev = _restore(nlp, ev, theta, options)
            x = ev.x
            nu = _least_squares_multipliers(ev, lam)
            working_set = tuple(int(i) for i in np.flatnonzero((lam > 0) | (ev.g > -options.activity_threshold)))
            restored = True
            restorations += 1
            continue
        if step is None:
            delta = min(
                options.max_dual_regularization, max(options.dual_regularization, options.stabilization * residual)
            )
            step = _solve_qp(hessian, ev, nu, working_set, options, last_reg, delta)
            dual_reg = delta
        restored = False
        if step is None:
            status = SolveStatus.QP_FAILURE
            message = "no admissible Hessian shift"
            break
        qp, sol, reg = step
        last_reg = reg
        regs.append(reg)
        if not sol.ok:
            status = SolveStatus.QP_FAILURE
            message = f"QP subproblem: {sol.status.value} after {sol.pivots} pivots"
            break
        working_set = sol.working_set
        d = sol.d
        new_nu = sol.nu

        mult_max = max(float(np.abs(sol.lam).max(initial=0.0)), float(np.abs(new_nu).max(initial=0.0)))
        lin_g = ev.g + ev.d.jac_g @ d
        lin_h = ev.h + ev.d.jac_h @ d
        infeas0 = _infeasibility(ev.g, ev.h)
        reduction = infeas0 - _infeasibility(lin_g, lin_h)
        penalty = max(penalty, ls.penalty_margin * mult_max)
        if reduction > 0:
            curv = max(float(d @ (hessian @ d)), 0.0)
            penalty = max(penalty, (float(ev.d.grad_f @ d) + 0.5 * curv) / (0.5 * reduction))
        phi0 = _merit(ev.f, ev.g, ev.h, penalty)
        slope = min(float(ev.d.grad_f @ d) - penalty * reduction, 0.0)
        noise = 10.0 * np.finfo(float).eps * (1.0 + abs(phi0))

        alpha = 1.0
        accepted = None
        if -slope <= noise:
            # The predicted decrease is below rounding level: take the full step.
            try:
                accepted = (_Evaluation(nlp, x + d, theta), 1.0)
            except Exception:
                accepted = None
        while accepted is None and alpha >= ls.min_step:
            trial_x = x + alpha * d
            try:
                trial = _Evaluation(nlp, trial_x, theta)
            except Exception:  # evaluator failure: treat as a rejected trial
                trial = None
            if trial is not None:
                phi = _merit(trial.f, trial.g, trial.h, penalty)
                if phi <= phi0 + ls.armijo * alpha * slope + noise:
                    accepted = (trial, alpha)
                    break
                if alpha == 1.0 and ls.second_order_correction and (nlp.n_eq or nlp.n_in):
                    try:
                        soc = qp.solve(
                            ev.d.grad_f,
                            -trial.h + ev.d.jac_h @ d - dual_reg * nu,
                            -trial.g + ev.d.jac_g @ d,
                            working_set,
                            max_pivots=options.qp_max_pivots,
                        )
                    except NonConvexSubproblem:
                        soc = None
                    if soc is not None and soc.ok:
                        try:
                            soc_trial = _Evaluation(nlp, x + soc.d, theta)
                        except Exception:
                            soc_trial = None
                        if soc_trial is not None:
                            phi_soc = _merit(soc_trial.f, soc_trial.g, soc_trial.h, penalty)
                            if phi_soc <= phi0 + ls.armijo * slope + noise:
                                accepted = (soc_trial, 1.0)
                                break
            alpha *= ls.backtrack
        if accepted is None:
            status = SolveStatus.LINE_SEARCH_FAILURE
            message = f"no acceptable step down to alpha={ls.min_step:g}"
            break
        ev, alpha = accepted
        x = ev.x
        lam = np.maximum(lam + alpha * (sol.lam - lam), 0.0)
        nu = nu + alpha * (new_nu - nu)
        steps.append(alpha)

    iterations = len(residuals) - 1
    if init is not None and iterations == 0 and status is SolveStatus.CONVERGED and np.array_equal(theta, init.theta):
        point = init
    else:
        point = PrimalDualPoint(theta=theta, x=x, lam=lam, nu=nu, kkt_residual_inf=residuals[-1])
    trace = SolveTrace(
        iterations=iterations,
        final_kkt_residual=residuals[-1],
        status=status,
        residual_log=tuple(residuals),
        regularization_log=tuple(regs),
        step_log=tuple(steps),
        message=message,
        restorations=restorations,
    )
    return point, trace


def resolve_perturbed(
    nlp: ParametricNlp,
    base: PrimalDualPoint,
    theta_new,
    options: SolverOptions = SolverOptions(),
) -> tuple[PrimalDualPoint, SolveTrace]:
    """Warm-started solve at ``theta_new`` starting from ``base``."""
    theta_new = np.atleast_1d(np.asarray(theta_new, dtype=float))
    if theta_new.shape != base.theta.shape:
        raise DimensionMismatch(f"theta_new has shape {theta_new.shape}, expected {base.theta.shape}")
    return solve(nlp, theta_new, init=base, options=options)
