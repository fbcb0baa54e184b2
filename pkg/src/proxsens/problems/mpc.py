"""Receding-horizon MPC of a two-state nonlinear plant with sensitivity propagation.

Plant, with parameter ``theta``::

    x1+ = x1 + 0.4 x2
    x2+ = 0.56 x2 + 0.1 x1 x2 + 0.4 u + theta x1 exp(-x1)

The MPC problem at measured state ``s`` minimizes ``sum_k x_k^T Q x_k`` over
``k = 0..N`` subject to the plant, ``x_0 = s``, ``|u_k| <= 2`` and
``|x2_k| <= 2``.  Its NLP parameter is ``p = (s1, s2, theta)`` so one
sensitivity solve gives the derivative of the first input with respect to both
the state and ``theta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, SolverFailure
from ..model import Derivatives, ParametricNlp, PrimalDualPoint
from ..oracle import compare
from ..report import ExperimentReport, ReportRow
from ..sensitivity import least_squares_jacobian, lift_to_slack, surrogate_jacobian_lifted
from ..sqp import SolverOptions, solve

__all__ = [
    "MpcConfig",
    "MpcLayout",
    "ClosedLoopTrajectory",
    "NOMINAL_THETA",
    "plant_step",
    "plant_jacobians",
    "build_mpc_problem",
    "solve_mpc",
    "mpc_sensitivity",
    "closed_loop_rollout",
    "closed_loop_rollouts",
    "closed_loop_finite_difference",
    "closed_loop_report",
    "stack_sensitivities",
]

NOMINAL_THETA = 0.5


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    stage_weights: tuple = (1e-2, 1.0)
    input_bound: float = 2.0
    state_bound: float = 2.0
    rollout_length: int = 200
    initial_state: tuple = (3.0, 0.0)

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be at least 1")
        if int(self.rollout_length) < 0:
            raise ConfigError("rollout_length must be nonnegative")
        if not (self.input_bound > 0 and self.state_bound > 0):
            raise ConfigError("bounds must be positive")
        if len(self.stage_weights) != 2 or min(self.stage_weights) < 0:
            raise ConfigError("stage_weights must be two nonnegative numbers")
        if len(self.initial_state) != 2:
            raise ConfigError("initial_state must have two entries")


def plant_step(state, u, theta):
    """One step of the plant; works on floats and on AD jets."""
    x1, x2 = state[0], state[1]
    return (x1 + 0.4 * x2, 0.56 * x2 + 0.1 * x1 * x2 + 0.4 * u + theta * x1 * np.exp(-x1))


def plant_jacobians(state, u, theta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(df/dx, df/du, df/dtheta)`` with shapes ``(2, 2)``, ``(2,)``, ``(2,)``."""
    x1, x2 = float(state[0]), float(state[1])
    e = np.exp(-x1)
    fx = np.array([[1.0, 0.4], [0.1 * x2 + theta * e * (1.0 - x1), 0.56 + 0.1 * x1]])
    return fx, np.array([0.0, 0.4]), np.array([0.0, x1 * e])


@dataclass(frozen=True)
class MpcLayout:
    """Decision vector ``(x_0..x_N, u_0..u_{N-1})`` with ``x_k`` in R^2."""

    horizon: int
    n_x: int = field(init=False)
    n_eq: int = field(init=False)
    n_in: int = field(init=False)

    def __post_init__(self):
        n = self.horizon
        object.__setattr__(self, "n_x", 3 * n + 2)
        object.__setattr__(self, "n_eq", 2 * (n + 1))
        object.__setattr__(self, "n_in", 2 * n + 2 * (n + 1))

    @property
    def input_offset(self) -> int:
        return 2 * (self.horizon + 1)

    def states(self, x) -> np.ndarray:
        return np.asarray(x)[: self.input_offset].reshape(self.horizon + 1, 2)

    def inputs(self, x) -> np.ndarray:
        return np.asarray(x)[self.input_offset :]

    def pack(self, states, inputs) -> np.ndarray:
        return np.concatenate([np.ravel(states), np.ravel(inputs)])


def build_mpc_problem(current_state=(3.0, 0.0), theta: float = NOMINAL_THETA, config: MpcConfig = MpcConfig()):
    """MPC problem with parameter ``(state, theta)``; arguments set the probe point.

    Equalities: ``x_0 - s`` followed by the plant defects ``x_{k+1} - f``.
    Inequalities: ``u_k - b, -u_k - b`` for each input, then
    ``x2_k - b, -x2_k - b`` for ``k = 0..N``.
    """
    cfg = config
    lay = MpcLayout(int(cfg.horizon))
    n = lay.horizon
    q = np.asarray(cfg.stage_weights, dtype=float)
    off = lay.input_offset
    k = np.arange(n)
    ix1 = 2 * k  # x1 of x_k, k < N
    ix2 = ix1 + 1
    iu = off + k

    def objective(x, p):
        xs = lay.states(x)
        return float(np.sum(q * xs**2))

    def equality(x, p):
        xs, us = lay.states(x), lay.inputs(x)
        nxt = np.column_stack(plant_step(xs[:-1].T, us, p[2]))
        return np.concatenate([xs[0] - p[:2], (xs[1:] - nxt).ravel()])

    def inequality(x, p):
        xs, us = lay.states(x), lay.inputs(x)
        bu, bx = cfg.input_bound, cfg.state_bound
        return np.concatenate([np.column_stack([us - bu, -us - bu]).ravel(),
                               np.column_stack([xs[:, 1] - bx, -xs[:, 1] - bx]).ravel()])

    jac_g = np.zeros((lay.n_in, lay.n_x))
    jac_g[2 * k, iu] = 1.0
    jac_g[2 * k + 1, iu] = -1.0
    kk = np.arange(n + 1)
    jac_g[2 * n + 2 * kk, 2 * kk + 1] = 1.0
    jac_g[2 * n + 2 * kk + 1, 2 * kk + 1] = -1.0
    hess_f = np.diag(np.tile(2.0 * q, n + 1))
    hess_f = np.pad(hess_f, ((0, n), (0, n)))
    row1 = 2 + 2 * k  # defect rows for x1_{k+1}
    row2 = row1 + 1

    def derivatives(x, p):
        x = np.asarray(x, dtype=float)
        xs = lay.states(x)
        th = float(p[2])
        a, b = xs[:-1, 0], xs[:-1, 1]
        e = np.exp(-a)
        grad_f = np.concatenate([(2.0 * q * xs).ravel(), np.zeros(n)])
        jac_h = np.zeros((lay.n_eq, lay.n_x))
        jac_h[0, 0] = jac_h[1, 1] = 1.0
        jac_h[row1, ix1 + 2] = 1.0
        jac_h[row2, ix2 + 2] = 1.0
        jac_h[row1, ix1] = -1.0
        jac_h[row1, ix2] = -0.4
        jac_h[row2, ix1] = -(0.1 * b + th * e * (1.0 - a))
        jac_h[row2, ix2] = -(0.56 + 0.1 * a)
        jac_h[row2, iu] = -0.4
        theta_jac_h = np.zeros((lay.n_eq, 3))
        theta_jac_h[0, 0] = theta_jac_h[1, 1] = -1.0
        theta_jac_h[row2, 2] = -a * e

        def curvature(lam, nu):
            w = np.asarray(nu, dtype=float)[row2]
            hess = hess_f.copy()
            hess[ix1, ix1] -= w * th * e * (a - 2.0)
            hess[ix1, ix2] -= 0.1 * w
            hess[ix2, ix1] -= 0.1 * w
            cross = np.zeros((lay.n_x, 3))
            cross[ix1, 2] = -w * e * (1.0 - a)
            return hess, cross

        return Derivatives(
            grad_f=grad_f,
            jac_g=jac_g.copy(),
            jac_h=jac_h,
            theta_jac_g=np.zeros((lay.n_in, 3)),
            theta_jac_h=theta_jac_h,
            curvature=curvature,
        )

    def initializer(p):
        # Open-loop simulation with zero input, clipped to the state bound.
        xs = np.zeros((n + 1, 2))
        xs[0] = p[:2]
        for t in range(n):
            xs[t + 1] = plant_step(xs[t], 0.0, p[2])
            xs[t + 1, 1] = np.clip(xs[t + 1, 1], -cfg.state_bound, cfg.state_bound)
        return lay.pack(xs, np.zeros(n))

    p0 = np.array([*np.asarray(current_state, dtype=float), float(theta)])
    return ParametricNlp(
        n_x=lay.n_x,
        n_in=lay.n_in,
        n_eq=lay.n_eq,
        n_theta=3,
        objective=objective,
        inequality=inequality,
        equality=equality,
        derivatives=derivatives,
        name=f"mpc_N{n}",
        initializer=initializer,
        probe=(initializer(p0) + 0.01, p0),
        metadata={"layout": lay, "config": cfg},
    )


def _shifted(nlp: ParametricNlp, pt: PrimalDualPoint, param: np.ndarray) -> PrimalDualPoint:
    """Warm start for the next step: drop the first stage and repeat the last."""
    lay: MpcLayout = nlp.metadata["layout"]
    n = lay.horizon

    def shift(a, width):
        a = np.asarray(a).reshape(-1, width)
        return np.vstack([a[1:], a[-1:]]).ravel()

    xs = shift(lay.states(pt.x), 2)
    us = shift(lay.inputs(pt.x), 1)
    lam_u = shift(pt.lam[: 2 * n], 2)
    lam_x = shift(pt.lam[2 * n :], 2)
    nu = np.concatenate([pt.nu[:2], shift(pt.nu[2:], 2)])
    return PrimalDualPoint(
        theta=param,
        x=np.concatenate([xs, us]),
        lam=np.concatenate([lam_u, lam_x]),
        nu=nu,
        kkt_residual_inf=np.inf,
    )


def solve_mpc(nlp: ParametricNlp, param, options: SolverOptions, warm: PrimalDualPoint | None = None, time_index=None):
    """Solve one MPC instance; a failed solve raises :class:`SolverFailure`."""
    param = np.asarray(param, dtype=float)
    pt, trace = solve(nlp, param, init=warm, options=options)
    if not trace.converged and warm is not None:
        pt, trace = solve(nlp, param, options=options)
    if not trace.converged:
        raise SolverFailure(
            f"MPC solve ended with {trace.status.value} (residual {trace.final_kkt_residual:.2e})", time_index
        )
    return pt


def mpc_sensitivity(nlp: ParametricNlp, pt: PrimalDualPoint, rho: float, lifted=None) -> np.ndarray:
    """Jacobian of the decision vector w.r.t. ``(s1, s2, theta)``; ``rho = 0`` uses least squares."""
    if rho == 0:
        return least_squares_jacobian(nlp, pt).dx_dtheta
    if lifted is None:
        lifted = lift_to_slack(nlp, pt)
    return surrogate_jacobian_lifted(nlp, lifted, rho).dx_dtheta


@dataclass(frozen=True)
class ClosedLoopTrajectory:
    """States ``x_0..x_T``, inputs ``u_0..u_{T-1}`` and their derivatives w.r.t. ``theta``."""

    theta: float
    rho: float
    states: np.ndarray  # (T+1, 2)
    inputs: np.ndarray  # (T,)
    state_sensitivities: np.ndarray  # (T+1, 2)
    input_sensitivities: np.ndarray  # (T,)
    policy_jacobians: np.ndarray = field(repr=False, default=None)  # (T, 3): dMPC/d(s1, s2, theta)


def _propagate(states, inputs, policy_jacobians, theta):
    t_len = inputs.size
    dx = np.zeros((t_len + 1, 2))
    du = np.zeros(t_len)
    for t in range(t_len):
        fx, fu, fth = plant_jacobians(states[t], inputs[t], theta)
        m = policy_jacobians[t]
        du[t] = m[:2] @ dx[t] + m[2]
        dx[t + 1] = fx @ dx[t] + fth + fu * du[t]
    return dx, du


def _simulate(theta, config, solver_options, t_len):
    """Run the closed loop; returns the problem, states, inputs and per-step solutions."""
    nlp = build_mpc_problem(config.initial_state, theta, config)
    u0 = nlp.metadata["layout"].input_offset
    states = np.zeros((t_len + 1, 2))
    states[0] = config.initial_state
    inputs = np.zeros(t_len)
    points = []
    pt = None
    for t in range(t_len):
        param = np.array([states[t, 0], states[t, 1], theta])
        warm = None if pt is None else _shifted(nlp, pt, param)
        pt = solve_mpc(nlp, param, solver_options, warm, time_index=t)
        points.append(pt)
        inputs[t] = pt.x[u0]
        states[t + 1] = plant_step(states[t], inputs[t], theta)
    return nlp, states, inputs, points


def closed_loop_rollouts(
    theta: float = NOMINAL_THETA,
    config: MpcConfig = MpcConfig(),
    rhos=(3e-7,),
    solver_options: SolverOptions = SolverOptions(),
    rollout_length: int | None = None,
) -> list[ClosedLoopTrajectory]:
    """Closed-loop simulation sharing the MPC solves across several ``rho`` values.

    The trajectory does not depend on ``rho``; only the policy Jacobians do.
    """
    rhos = [float(r) for r in rhos]
    if not rhos or min(rhos) < 0:
        raise ConfigError("rhos must be a nonempty list of nonnegative values")
    t_len = int(config.rollout_length if rollout_length is None else rollout_length)
    nlp, states, inputs, points = _simulate(theta, config, solver_options, t_len)
    u0 = nlp.metadata["layout"].input_offset
    jacs = np.zeros((len(rhos), t_len, 3))
    for t, pt in enumerate(points):
        lifted = lift_to_slack(nlp, pt) if any(r > 0 for r in rhos) else None
        for i, rho in enumerate(rhos):
            jacs[i, t] = mpc_sensitivity(nlp, pt, rho, lifted)[u0]
    out = []
    for i, rho in enumerate(rhos):
        dx, du = _propagate(states, inputs, jacs[i], theta)
        out.append(ClosedLoopTrajectory(theta, rho, states.copy(), inputs.copy(), dx, du, jacs[i].copy()))
    return out


def closed_loop_rollout(
    theta: float = NOMINAL_THETA,
    config: MpcConfig = MpcConfig(),
    rho: float = 3e-7,
    solver_options: SolverOptions = SolverOptions(),
    rollout_length: int | None = None,
) -> ClosedLoopTrajectory:
    """Closed-loop trajectory and its ``theta``-derivative via the propagation recursion."""
    return closed_loop_rollouts(theta, config, [rho], solver_options, rollout_length)[0]


def closed_loop_finite_difference(
    theta: float = NOMINAL_THETA,
    config: MpcConfig = MpcConfig(),
    step: float = 1e-8,
    solver_options: SolverOptions = SolverOptions(kkt_tolerance=1e-12),
    rollout_length: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference derivatives of the closed-loop states ``(T+1, 2)`` and inputs ``(T,)``."""
    if not step > 0:
        raise ConfigError("step must be positive")
    t_len = int(config.rollout_length if rollout_length is None else rollout_length)
    _, xp, up, _ = _simulate(theta + step, config, solver_options, t_len)
    _, xm, um, _ = _simulate(theta - step, config, solver_options, t_len)
    return (xp - xm) / (2.0 * step), (up - um) / (2.0 * step)


def stack_sensitivities(state_sensitivities, input_sensitivities) -> np.ndarray:
    """Flatten state and input derivatives into one vector for comparison."""
    return np.concatenate([np.ravel(state_sensitivities), np.ravel(input_sensitivities)])


def closed_loop_report(
    theta: float = NOMINAL_THETA,
    config: MpcConfig = MpcConfig(),
    grid=(0.0, 3e-7),
    fd_step: float = 1e-8,
    solver_options: SolverOptions = SolverOptions(kkt_tolerance=1e-11),
    rollout_length: int | None = None,
) -> ExperimentReport:
    """Per-rho error of the propagated closed-loop derivative against finite differences.

    The comparison stacks state and input derivatives.  Below the input
    bound the controller cancels the ``theta`` term of the plant, so the state
    derivatives alone can vanish identically.
    """
    grid = [float(r) for r in grid]
    t_len = int(config.rollout_length if rollout_length is None else rollout_length)
    trajs = closed_loop_rollouts(theta, config, grid, solver_options, t_len)
    reference = stack_sensitivities(*closed_loop_finite_difference(theta, config, fd_step, solver_options, t_len))
    rows = []
    for tr in trajs:
        m = compare(stack_sensitivities(tr.state_sensitivities, tr.input_sensitivities), reference)
        rows.append(ReportRow(tr.rho, m.relative_error_inf, m.cosine_similarity))
    meta = {
        "experiment": "mpc-rollout",
        "theta": theta,
        "rollout_length": t_len,
        "horizon": config.horizon,
        "fd_step": fd_step,
        "kkt_tolerance": solver_options.kkt_tolerance,
    }
    return ExperimentReport(tuple(rows), meta)
