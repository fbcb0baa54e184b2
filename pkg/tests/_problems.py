"""Randomized test problems with known KKT points.

Each problem is built around a chosen primal-dual point ``(x*, lam*, nu*)`` at
``theta0``: constraint offsets put the chosen inequalities exactly at zero
and the rest at a margin, and a linear objective term makes the gradient of
the Lagrangian vanish.  The returned point is therefore a KKT point to
rounding level without running a solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from proxsens.model import ParametricNlp, PrimalDualPoint


@dataclass(frozen=True)
class KnownProblem:
    nlp: ParametricNlp
    point: PrimalDualPoint
    active: tuple[int, ...]


def random_problem(seed: int, nonlinear: bool = False, n_eq: int | None = None) -> KnownProblem:
    """Strictly convex objective; LICQ and strict complementarity hold by construction.

    With ``nonlinear`` the objective gains a quartic term and the
    inequalities a convex quadratic term, so the problem stays convex.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 6))
    n_theta = int(rng.integers(1, 4))
    n_in = int(rng.integers(2, 5))
    n_eq = int(rng.integers(0, 2)) if n_eq is None else n_eq
    n_act = int(rng.integers(1, min(n_in, n - n_eq - 1) + 1))

    m = rng.standard_normal((n, n))
    q = m @ m.T + n * np.eye(n)
    c_theta = rng.standard_normal((n, n_theta))
    a = rng.standard_normal((n_in, n))
    d = rng.standard_normal((n_in, n_theta))
    e = rng.standard_normal((n_eq, n))
    f_theta = rng.standard_normal((n_eq, n_theta))
    quad = 0.2 * rng.uniform(size=n_in) if nonlinear else np.zeros(n_in)
    quart = 0.05 if nonlinear else 0.0

    x_star = rng.standard_normal(n)
    theta0 = rng.standard_normal(n_theta)
    lam = np.zeros(n_in)
    lam[:n_act] = rng.uniform(0.5, 2.0, n_act)
    nu = rng.standard_normal(n_eq)
    margin = np.zeros(n_in)
    margin[n_act:] = rng.uniform(0.5, 2.0, n_in - n_act)

    def g_raw(x, theta):
        return a @ x + quad * (x @ x) - d @ theta

    r = g_raw(x_star, theta0) + margin
    e_off = e @ x_star + f_theta @ theta0
    jac_g = a + 2.0 * quad[:, None] * x_star[None, :]
    grad_rest = q @ x_star + 4.0 * quart * x_star**3 + c_theta @ theta0
    c0 = -(grad_rest + jac_g.T @ lam + e.T @ nu)

    def objective(x, theta):
        return 0.5 * (x @ (q @ x)) + quart * (x**4).sum() + (c0 + c_theta @ theta) @ x

    def inequality(x, theta):
        return g_raw(x, theta) - r

    def equality(x, theta):
        return e @ x + f_theta @ theta - e_off

    nlp = ParametricNlp.from_functions(
        objective,
        inequality,
        equality if n_eq else None,
        n_x=n,
        n_theta=n_theta,
        name=f"random-{seed}",
        probe=(x_star, theta0),
    )
    point = PrimalDualPoint.at(nlp, theta0, x_star, lam, nu)
    return KnownProblem(nlp, point, tuple(range(n_act)))


def coupled_convex_problem() -> ParametricNlp:
    """Three variables, three parameters, one active and two inactive inequalities at ``(1, 0.8, 0.6)``."""
    q = np.array([[3.0, 1.0, 0.0], [1.0, 2.0, 0.5], [0.0, 0.5, 1.5]])

    def objective(x, theta):
        d = x - theta
        return 0.5 * (d @ (q @ d)) + 0.25 * x[0] ** 4

    def inequality(x, theta):
        return np.array([x[0] + x[1] + x[2] - 1.0, -x[1] - 0.5, x[2] ** 2 + x[0] - 3.0])

    return ParametricNlp.from_functions(objective, inequality, None, n_x=3, n_theta=3, name="coupled")


COUPLED_THETA = np.array([1.0, 0.8, 0.6])


def scalar_inactive_problem() -> ParametricNlp:
    """``min x**2 / 2`` subject to ``x - theta <= 0``; at ``theta = 1`` the constraint is inactive."""
    return ParametricNlp.from_functions(
        lambda x, t: 0.5 * x[0] ** 2,
        lambda x, t: np.array([x[0] - t[0]]),
        None,
        n_x=1,
        n_theta=1,
        name="scalar",
    )


def projection_problem(n: int = 2) -> ParametricNlp:
    """Unconstrained ``min ||x - theta||**2 / 2``; the solution map is the identity."""
    return ParametricNlp.from_functions(lambda x, t: 0.5 * ((x - t) @ (x - t)), n_x=n, n_theta=n, name="projection")
