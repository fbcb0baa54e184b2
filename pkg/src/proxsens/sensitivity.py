"""Jacobians of the primal solution map ``theta -> x(theta)``.

Sign convention: differentiating the KKT equations ``F(w(theta), theta) = 0``
gives ``A V = -b`` with ``A = dF/dw`` and ``b = dF/dtheta``.  Every routine in
this module solves with ``-b`` so that the returned ``dx_dtheta`` is the
derivative itself (it agrees in sign with finite differences).

Two linear systems are provided:

* the classical system, built from the active constraints at a KKT point; it
  is singular when strong second-order sufficiency, LICQ or strict
  complementarity fail;
* the proximally regularized surrogate system, obtained by rewriting
  ``g(x) <= 0`` as ``g(x) + z**2 / 2 = 0`` and differentiating the solution map
  of the proximal problem around the lifted point ``(x, z, mu)``.  It is
  solvable for any small ``rho > 0`` and tends to the classical solution as
  ``rho -> 0`` whenever the latter exists.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    BoundInapplicable,
    IllConditionedWarning,
    InfeasiblePoint,
    MissingDualSensitivities,
    NonPositiveRho,
    SingularKktMatrix,
)
from .linalg import LdlFactorization, condition_inf, min_norm_lstsq
from .model import (
    DEFAULT_ACTIVITY_TOL,
    ActiveSetPartition,
    KktEvaluation,
    ParametricNlp,
    PrimalDualPoint,
    _partition,
    evaluate_kkt,
)

__all__ = [
    "DEFAULT_RHO",
    "Method",
    "DualSensitivities",
    "SensitivityResult",
    "LiftedPoint",
    "SurrogateSystem",
    "TheoremOneConstants",
    "classical_system",
    "classical_jacobian",
    "lift_to_slack",
    "assemble_surrogate_system",
    "surrogate_jacobian",
    "surrogate_jacobian_lifted",
    "least_squares_jacobian",
    "theorem1_constants",
    "predict_solution",
    "kkt_p2_residual",
    "proximal_kkt_residual",
    "proximal_constraint_jacobian",
]

DEFAULT_RHO = 1e-5
SIGN_CONVENTION = "true derivative: every linear system is solved as A V = -b"
_ILL_CONDITIONED = 1.0 / (np.finfo(float).eps * 1e3)


@dataclass(frozen=True)
class Method:
    """How a Jacobian was obtained: ``classical``, ``surrogate``, ``least_squares`` or ``finite_difference``."""

    kind: str
    parameter: Optional[float] = None

    def __str__(self) -> str:
        if self.kind == "surrogate":
            return f"surrogate(rho={self.parameter:g})"
        if self.kind == "finite_difference":
            return f"finite_difference(step={self.parameter:g})"
        return self.kind


@dataclass(frozen=True)
class DualSensitivities:
    """Multiplier (and slack) Jacobians, each with ``n_theta`` columns.

    For the surrogate these are derivatives of the lifted variables ``(z, mu)``
    of the proximal problem, with ``mu = (lam, nu)``.  They are not claimed to
    be derivatives of the original problem's multipliers when that problem is
    degenerate.
    """

    dlam: np.ndarray
    dnu: np.ndarray
    dz: Optional[np.ndarray] = None

    @property
    def dmu(self) -> np.ndarray:
        return np.vstack([self.dlam, self.dnu])


@dataclass(frozen=True)
class SensitivityResult:
    dx_dtheta: np.ndarray
    method: Method
    dual_sensitivities: Optional[DualSensitivities] = None
    condition: float = np.nan
    solve_residual: float = np.nan
    rank: Optional[int] = None


@dataclass(frozen=True)
class LiftedPoint:
    """Point ``(x, z, mu)`` of the slack reformulation at ``theta``; ``mu = (lam, nu)``."""

    theta: np.ndarray
    x: np.ndarray
    z: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        for name in ("theta", "x", "z", "mu"):
            arr = np.array(np.atleast_1d(getattr(self, name)), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.z.size and self.z.min() < 0:
            raise ValueError("slack variables must be nonnegative")

    @property
    def n_in(self) -> int:
        return self.z.size

    @property
    def lam(self) -> np.ndarray:
        return self.mu[: self.n_in]

    @property
    def nu(self) -> np.ndarray:
        return self.mu[self.n_in :]

    def as_primal_dual(self, nlp: ParametricNlp) -> PrimalDualPoint:
        return PrimalDualPoint.at(nlp, self.theta, self.x, np.maximum(self.lam, 0.0), self.nu)


@dataclass(frozen=True)
class SurrogateSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    H: np.ndarray
    l: np.ndarray
    rho: float
    active_partition: ActiveSetPartition
    weights: np.ndarray  # rho / (z_i^2 + rho^2) on the inactive set
    classical_matrix: np.ndarray
    classical_rhs: np.ndarray


@dataclass(frozen=True)
class TheoremOneConstants:
    """Constants of the linear-in-rho error bound at a lifted point.

    ``bound_coefficient`` is ``2 l3 / (1 - rho_bar kappa l3)`` with
    ``l3 = max(l1 / ||A||, l2 / ||b||)``.  It is not a guaranteed bound in
    general: it ignores the ``rho I`` blocks of the perturbation and the factor
    ``kappa`` of the standard perturbation lemma.  ``rigorous_coefficient``
    includes both, uses entrywise absolute values of the inactive Jacobians,
    and rescales from the full solution to its x-rows, so that
    ``rel_err(rho) <= rigorous_coefficient * rho`` holds for ``rho <= rho_bar``.
    """

    l1: float
    l2: float
    l3: float
    kappa: float
    rho_bar: float
    bound_coefficient: float
    rigorous_coefficient: float


# -- classical system ------------------------------------------------------------


def classical_system(kkt: KktEvaluation, partition: ActiveSetPartition) -> tuple[np.ndarray, np.ndarray]:
    """Matrix ``A`` and right-hand side ``b`` of the active-set KKT derivative system."""
    act = partition.active_index
    jg = kkt.grad_g[act]
    jh = kkt.grad_h
    n, na, ne = kkt.lagrangian_hessian.shape[0], act.size, jh.shape[0]
    size = n + na + ne
    a = np.zeros((size, size))
    a[:n, :n] = kkt.lagrangian_hessian
    a[n : n + na, :n] = jg
    a[:n, n : n + na] = jg.T
    a[n + na :, :n] = jh
    a[:n, n + na :] = jh.T
    b = np.vstack([kkt.theta_cross, kkt.theta_grad_g[act], kkt.theta_grad_h])
    return a, b


def _residual(a, v, rhs) -> float:
    return float(np.abs(a @ v - rhs).max(initial=0.0))


def _classical_duals(v, n, partition, n_in, n_theta):
    act = partition.active_index
    dlam = np.zeros((n_in, n_theta))
    dlam[act] = v[n : n + act.size]
    return DualSensitivities(dlam=dlam, dnu=v[n + act.size :])


def classical_jacobian(nlp: ParametricNlp, pt: PrimalDualPoint, tolerance: float = DEFAULT_ACTIVITY_TOL) -> SensitivityResult:
    """Solve the classical system by a symmetric indefinite factorization.

    Raises :class:`SingularKktMatrix` when the factorization finds a zero
    pivot; use :func:`surrogate_jacobian` in that case.
    """
    kkt = evaluate_kkt(nlp, pt)
    part = _partition(kkt.g, tolerance)
    a, b = classical_system(kkt, part)
    factor = LdlFactorization(a)
    if factor.is_singular:
        raise SingularKktMatrix(
            f"classical KKT matrix is singular (smallest pivot {factor.min_abs_pivot:.2e}); "
            "strong second-order sufficiency, LICQ or strict complementarity fails"
        )
    rhs = -b
    v = factor.solve(rhs)
    return SensitivityResult(
        dx_dtheta=v[: nlp.n_x].copy(),
        method=Method("classical"),
        dual_sensitivities=_classical_duals(v, nlp.n_x, part, nlp.n_in, nlp.n_theta),
        condition=1.0 / max(factor.rcond(), 1e-300),
        solve_residual=_residual(a, v, rhs),
    )


def least_squares_jacobian(nlp: ParametricNlp, pt: PrimalDualPoint, tolerance: float = DEFAULT_ACTIVITY_TOL) -> SensitivityResult:
    """Minimum-norm least-squares solution of the classical system."""
    kkt = evaluate_kkt(nlp, pt)
    part = _partition(kkt.g, tolerance)
    a, b = classical_system(kkt, part)
    rhs = -b
    v, rank = min_norm_lstsq(a, rhs, rank_tol=1e-10)
    return SensitivityResult(
        dx_dtheta=v[: nlp.n_x].copy(),
        method=Method("least_squares"),
        dual_sensitivities=_classical_duals(v, nlp.n_x, part, nlp.n_in, nlp.n_theta),
        condition=condition_inf(a),
        solve_residual=_residual(a, v, rhs),
        rank=rank,
    )


# -- slack lift and surrogate ------------------------------------------------------


def lift_to_slack(nlp: ParametricNlp, pt: PrimalDualPoint, tolerance: float = DEFAULT_ACTIVITY_TOL) -> LiftedPoint:
    """Map ``(x, lam, nu)`` to ``(x, z, mu)`` with ``z_i = sqrt(max(0, -2 g_i(x)))``."""
    _, g, _ = nlp.values(pt.x, pt.theta)
    if g.size and g.max() > tolerance:
        i = int(np.argmax(g))
        raise InfeasiblePoint(f"inequality {i} violated by {g[i]:.3e} > {tolerance:g}")
    z = np.sqrt(np.maximum(0.0, -2.0 * g))
    return LiftedPoint(theta=pt.theta, x=pt.x, z=z, mu=np.concatenate([pt.lam, pt.nu]))


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not rho > 0:
        raise NonPositiveRho(f"rho must be positive, got {rho}")
    return rho


def _lifted_kkt(nlp: ParametricNlp, lifted: LiftedPoint) -> KktEvaluation:
    pt = PrimalDualPoint(theta=lifted.theta, x=lifted.x, lam=lifted.lam, nu=lifted.nu, kkt_residual_inf=np.nan,
                         tol_mult=np.inf)
    return evaluate_kkt(nlp, pt)


def _assemble(kkt: KktEvaluation, z: np.ndarray, rho: float, tolerance: float) -> SurrogateSystem:
    part = _partition(kkt.g, tolerance)
    a, b = classical_system(kkt, part)
    n = kkt.lagrangian_hessian.shape[0]
    inact = part.inactive_index
    jg = kkt.grad_g[inact]
    weights = rho / (z[inact] ** 2 + rho**2)
    h_mat = jg.T @ (weights[:, None] * jg)
    h_mat = 0.5 * (h_mat + h_mat.T)
    l_mat = jg.T @ (weights[:, None] * kkt.theta_grad_g[inact])
    matrix = a.copy()
    matrix[:n, :n] += h_mat + rho * np.eye(n)
    idx = np.arange(n, a.shape[0])
    matrix[idx, idx] -= rho
    rhs = b.copy()
    rhs[:n] += l_mat
    return SurrogateSystem(
        matrix=matrix,
        rhs=rhs,
        H=h_mat,
        l=l_mat,
        rho=rho,
        active_partition=part,
        weights=weights,
        classical_matrix=a,
        classical_rhs=b,
    )


def assemble_surrogate_system(
    nlp: ParametricNlp, lifted: LiftedPoint, rho: float, tolerance: float = DEFAULT_ACTIVITY_TOL
) -> SurrogateSystem:
    """Regularized derivative system at a lifted point.

    ``matrix = A + blkdiag(H + rho I, -rho I, -rho I)`` and ``rhs = b + [l; 0; 0]``
    where ``H`` and ``l`` collect the inactive constraints weighted by
    ``rho / (z_i**2 + rho**2)``.  Solving ``matrix V = -rhs`` gives the surrogate.
    """
    rho = _check_rho(rho)
    return _assemble(_lifted_kkt(nlp, lifted), lifted.z, rho, tolerance)


def _solve_surrogate(system: SurrogateSystem, kkt: KktEvaluation, lifted: LiftedPoint, n_theta: int):
    factor = LdlFactorization(system.matrix, zero_tol=0.0)
    rhs = -system.rhs
    if factor.info > 0:
        raise SingularKktMatrix("surrogate matrix is exactly singular; rho is too large for this problem")
    v = factor.solve(rhs)
    cond = 1.0 / max(factor.rcond(), 1e-300)
    if cond > _ILL_CONDITIONED:
        warnings.warn(f"surrogate system condition estimate {cond:.2e}", IllConditionedWarning, stacklevel=3)

    n = kkt.lagrangian_hessian.shape[0]
    part = system.active_partition
    act, inact = part.active_index, part.inactive_index
    n_in = lifted.n_in
    dx = v[:n]
    dlam = np.zeros((n_in, n_theta))
    dlam[act] = v[n : n + act.size]
    dlam[inact] = system.weights[:, None] * (kkt.grad_g[inact] @ dx + kkt.theta_grad_g[inact])
    dz = np.zeros((n_in, n_theta))
    dz[inact] = -(lifted.z[inact] / system.rho)[:, None] * dlam[inact]
    duals = DualSensitivities(dlam=dlam, dnu=v[n + act.size :], dz=dz)
    return v, duals, cond, _residual(system.matrix, v, rhs)


def surrogate_jacobian(
    nlp: ParametricNlp, pt: PrimalDualPoint, rho: float = DEFAULT_RHO, tolerance: float = DEFAULT_ACTIVITY_TOL
) -> SensitivityResult:
    """Jacobian of the proximal problem's solution map at the lifted ``pt``."""
    rho = _check_rho(rho)
    lifted = lift_to_slack(nlp, pt, tolerance)
    return surrogate_jacobian_lifted(nlp, lifted, rho, tolerance)


def surrogate_jacobian_lifted(
    nlp: ParametricNlp, lifted: LiftedPoint, rho: float = DEFAULT_RHO, tolerance: float = DEFAULT_ACTIVITY_TOL
) -> SensitivityResult:
    rho = _check_rho(rho)
    kkt = _lifted_kkt(nlp, lifted)
    system = _assemble(kkt, lifted.z, rho, tolerance)
    v, duals, cond, res = _solve_surrogate(system, kkt, lifted, nlp.n_theta)
    return SensitivityResult(
        dx_dtheta=v[: nlp.n_x].copy(),
        method=Method("surrogate", rho),
        dual_sensitivities=duals,
        condition=cond,
        solve_residual=res,
    )


# -- diagnostics -------------------------------------------------------------------


def theorem1_constants(
    nlp: ParametricNlp, lifted: LiftedPoint, rho_bar: float, tolerance: float = DEFAULT_ACTIVITY_TOL
) -> TheoremOneConstants:
    """Constants of the linear error bound between classical and surrogate Jacobians.

    Raises :class:`BoundInapplicable` (carrying the constants) if
    ``rho_bar * kappa * l3 >= 1`` or the corresponding condition for the
    rigorous coefficient fails.
    """
    rho_bar = _check_rho(rho_bar)
    kkt = _lifted_kkt(nlp, lifted)
    part = _partition(kkt.g, tolerance)
    a, b = classical_system(kkt, part)
    kappa = condition_inf(a)
    norm_a = float(np.linalg.norm(a, np.inf)) if a.size else 0.0
    norm_b = float(np.linalg.norm(b, np.inf)) if b.size else 0.0
    inact = part.inactive_index
    if inact.size == 0:
        l1 = l2 = l3 = 0.0
        l1_abs = l2_abs = 0.0
    else:
        jg, jt = kkt.grad_g[inact], kkt.theta_grad_g[inact]
        zmin2 = float((lifted.z[inact] ** 2).min())
        l1 = float(np.linalg.norm(jg.T @ jg, np.inf)) / zmin2
        l2 = float(np.linalg.norm(jg.T @ jt, np.inf)) / zmin2
        l3 = max(_ratio(l1, norm_a), _ratio(l2, norm_b))
        # Entrywise |J|^T |J| bounds J^T D J for any nonnegative diagonal D.
        l1_abs = float(np.linalg.norm(np.abs(jg).T @ np.abs(jg), np.inf)) / zmin2
        l2_abs = float(np.linalg.norm(np.abs(jg).T @ np.abs(jt), np.inf)) / zmin2
    # ||blkdiag(H + rho I, -rho I, -rho I)||_inf <= rho (l1_abs + 1).
    l3_full = max(_ratio(l1_abs + 1.0, norm_a), _ratio(l2_abs, norm_b))
    denom = 1.0 - rho_bar * kappa * l3
    denom_full = 1.0 - rho_bar * kappa * l3_full
    rigorous = np.inf
    if denom_full > 0 and np.isfinite(kappa):
        v = np.linalg.solve(a, -b)
        vx = float(np.linalg.norm(v[: nlp.n_x], np.inf))
        scale = float(np.linalg.norm(v, np.inf)) / vx if vx > 0 else np.inf
        rigorous = scale * 2.0 * kappa * l3_full / denom_full
    constants = TheoremOneConstants(
        l1=l1, l2=l2, l3=l3, kappa=kappa, rho_bar=rho_bar,
        bound_coefficient=2.0 * l3 / denom if denom > 0 else np.inf,
        rigorous_coefficient=rigorous,
    )
    if not (denom > 0 and denom_full > 0):
        raise BoundInapplicable(f"rho_bar * kappa * l3 = {rho_bar * kappa * l3:.3e} is not small", constants)
    return constants


def _ratio(num: float, den: float) -> float:
    if num == 0.0:
        return 0.0
    return num / den if den > 0 else np.inf


def predict_solution(lifted: LiftedPoint, sens: SensitivityResult, delta_theta) -> LiftedPoint:
    """First-order prediction ``xi + dxi/dtheta * delta_theta`` of the lifted solution."""
    duals = sens.dual_sensitivities
    if duals is None or duals.dz is None:
        raise MissingDualSensitivities("prediction needs slack and multiplier sensitivities (use the surrogate)")
    dt = np.atleast_1d(np.asarray(delta_theta, dtype=float))
    z = lifted.z + duals.dz @ dt
    return LiftedPoint(
        theta=lifted.theta + dt,
        x=lifted.x + sens.dx_dtheta @ dt,
        z=np.abs(z),
        mu=lifted.mu + duals.dmu @ dt,
    )


def kkt_p2_residual(nlp: ParametricNlp, lifted: LiftedPoint) -> float:
    """Squared Euclidean norm of the KKT map of the slack reformulation."""
    _, g, h = nlp.values(lifted.x, lifted.theta)
    d = nlp.derivatives_at(lifted.x, lifted.theta)
    stat = d.grad_f + d.jac_g.T @ lifted.lam + d.jac_h.T @ lifted.nu
    comp = lifted.lam * lifted.z
    cons = np.concatenate([g + 0.5 * lifted.z**2, h])
    return float(stat @ stat + comp @ comp + cons @ cons)


def proximal_kkt_residual(
    nlp: ParametricNlp,
    anchor: LiftedPoint,
    rho: float,
    x=None,
    z=None,
    mu=None,
    psi=None,
) -> float:
    """Infinity norm of the KKT residual of the proximal problem around ``anchor``.

    Unspecified arguments default to the anchor itself, with ``psi = mu``.
    """
    rho = _check_rho(rho)
    x = anchor.x if x is None else np.asarray(x, dtype=float)
    z = anchor.z if z is None else np.asarray(z, dtype=float)
    mu = anchor.mu if mu is None else np.asarray(mu, dtype=float)
    psi = mu if psi is None else np.asarray(psi, dtype=float)
    n_in = anchor.n_in
    _, g, h = nlp.values(x, anchor.theta)
    d = nlp.derivatives_at(x, anchor.theta)
    r1 = d.grad_f + rho * (x - anchor.x) + d.jac_g.T @ psi[:n_in] + d.jac_h.T @ psi[n_in:]
    r2 = psi[:n_in] * z + rho * (z - anchor.z)
    r3 = rho * (mu - psi)
    r4 = np.concatenate([g + 0.5 * z**2, h]) + rho * (anchor.mu - mu)
    return float(max(np.abs(r).max(initial=0.0) for r in (r1, r2, r3, r4)))


def proximal_constraint_jacobian(nlp: ParametricNlp, lifted: LiftedPoint, rho: float) -> np.ndarray:
    """Constraint-gradient matrix of the proximal problem, one column per constraint.

    Columns are the gradients with respect to ``(x, z, mu)`` of
    ``c(x, z) + rho (mu_bar - mu)``, i.e. the transpose of ``[B, -rho I]``.
    """
    rho = _check_rho(rho)
    d = nlp.derivatives_at(lifted.x, lifted.theta)
    n_in, n_eq = nlp.n_in, nlp.n_eq
    n_mu = n_in + n_eq
    b = np.zeros((n_mu, nlp.n_x + n_in))
    b[:n_in, : nlp.n_x] = d.jac_g
    b[n_in:, : nlp.n_x] = d.jac_h
    b[:n_in, nlp.n_x :] = np.diag(lifted.z)
    return np.hstack([b, -rho * np.eye(n_mu)]).T
