"""Equality-constrained QP whose solution set is a line for every alpha > 0.

    minimize   (alpha / 2) x1**2 + x2 + x3
    subject to x1 + x2 + x3 = 0

The minimizers are ``x1 = 1/alpha, x2 + x3 = -1/alpha`` with ``nu = -1``.  The
Hessian ``diag(alpha, 0, 0)`` is singular on the constraint null space, so the
classical derivative system is singular.
"""

from __future__ import annotations

import numpy as np

from ..errors import NonPositiveAlpha
from ..model import Derivatives, ParametricNlp

__all__ = ["build_qp_example", "qp_example_solution", "qp_example_surrogate", "qp_example_limit"]

_ONES = np.ones((1, 3))


def build_qp_example(alpha: float = 1.0) -> ParametricNlp:
    """The QP with parameter ``theta = (alpha,)``; ``alpha`` is the probe value."""
    alpha = float(alpha)
    if not alpha > 0:
        raise NonPositiveAlpha(f"alpha must be positive, got {alpha}")

    def objective(x, theta):
        return 0.5 * theta[0] * x[0] ** 2 + x[1] + x[2]

    def equality(x, theta):
        return np.array([x[0] + x[1] + x[2]])

    def derivatives(x, theta):
        a = theta[0]

        def curvature(lam, nu):
            hess = np.diag([a, 0.0, 0.0])
            cross = np.array([[x[0]], [0.0], [0.0]])
            return hess, cross

        return Derivatives(
            grad_f=np.array([a * x[0], 1.0, 1.0]),
            jac_g=np.zeros((0, 3)),
            jac_h=_ONES.copy(),
            theta_jac_g=np.zeros((0, 1)),
            theta_jac_h=np.zeros((1, 1)),
            curvature=curvature,
        )

    return ParametricNlp(
        n_x=3,
        n_in=0,
        n_eq=1,
        n_theta=1,
        objective=objective,
        inequality=lambda x, theta: np.zeros(0),
        equality=equality,
        derivatives=derivatives,
        name="qp_example",
        probe=(np.array([1.0, -0.5, -0.5]), np.array([alpha])),
    )


def qp_example_solution(alpha: float) -> np.ndarray:
    """The minimizer that splits ``-1/alpha`` evenly between ``x2`` and ``x3``."""
    return np.array([1.0 / alpha, -0.5 / alpha, -0.5 / alpha])


def qp_example_surrogate(alpha: float, rho: float) -> np.ndarray:
    """Closed-form solution ``(v1, v2, v3, v4)`` of the surrogate system with right-hand side ``(1/alpha, 0, 0, 0)``.

    :func:`proxsens.sensitivity.surrogate_jacobian` solves with the negated
    right-hand side, so its ``dx_dtheta`` equals ``-(v1, v2, v3)``.
    """
    v4 = rho / (alpha * rho**3 + alpha**2 * rho**2 + 3 * alpha * rho + 2 * alpha**2)
    v1 = (rho**2 + 2) * v4 / rho
    v2 = -v4 / rho
    return np.array([v1, v2, v2, v4])


def qp_example_limit(alpha: float) -> np.ndarray:
    """Derivative of :func:`qp_example_solution`, the ``rho -> 0`` limit of the surrogate Jacobian."""
    return np.array([-1.0, 0.5, 0.5]) / alpha**2
