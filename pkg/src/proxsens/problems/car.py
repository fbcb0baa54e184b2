"""Minimum-time car maneuver by direct transcription with RK4 and time dilation.

State ``(p_x, p_y, v_x, v_y, heading)``, input ``(throttle, steering)``::

    dv_x/dt = a cos(heading),  dv_y/dt = a sin(heading)
    dheading/dt = s (v_x cos(heading) + v_y sin(heading))

Time is normalized to ``[0, 1]`` and the dynamics are scaled by the time
dilation ``sigma``, which then equals the maneuver duration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import ad
from ..errors import ConfigError
from ..model import Derivatives, ParametricNlp, PrimalDualPoint

__all__ = ["CarProblemConfig", "CarLayout", "build_car_problem", "rk4_dilated_step", "car_rhs", "interpolate_solution", "solve_car"]


@dataclass(frozen=True)
class CarProblemConfig:
    n_nodes: int = 150
    theta: float = 1.0
    initial_state: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    terminal_position: tuple = (0.5, 0.25)
    terminal_velocity: tuple = (0.0, 0.0)
    throttle_scale: float = 0.75
    steering_bound: float = 0.25
    sigma_min: float = 1e-2
    sigma_init: float = 5.0
    fix_initial_heading: bool = True

    def __post_init__(self):
        if int(self.n_nodes) < 2:
            raise ConfigError("n_nodes must be at least 2")
        if not self.sigma_min > 0:
            raise ConfigError("sigma_min must be positive")
        if not (self.throttle_scale > 0 and self.steering_bound > 0):
            raise ConfigError("input bounds must be positive")
        if len(self.initial_state) != 5 or len(self.terminal_position) != 2 or len(self.terminal_velocity) != 2:
            raise ConfigError("boundary data has the wrong length")


def car_rhs(state, inp):
    """Continuous-time vector field; ``state`` and ``inp`` are sequences of components."""
    _, _, vx, vy, th = state
    a, s = inp
    c, sn = np.cos(th), np.sin(th)
    return (vx, vy, a * c, a * sn, s * (vx * c + vy * sn))


def _rk4(state, inp, sigma, dt):
    def f(xs):
        return tuple(sigma * fi for fi in car_rhs(xs, inp))

    k1 = f(state)
    k2 = f(tuple(x + 0.5 * dt * k for x, k in zip(state, k1)))
    k3 = f(tuple(x + 0.5 * dt * k for x, k in zip(state, k2)))
    k4 = f(tuple(x + dt * k for x, k in zip(state, k3)))
    return tuple(x + dt / 6.0 * (a + 2 * b + 2 * c + d) for x, a, b, c, d in zip(state, k1, k2, k3, k4))


def rk4_dilated_step(state, inp, sigma: float, dt: float) -> np.ndarray:
    """One classical RK4 step of ``sigma * f(x, u)`` with the input held constant."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    state = np.asarray(state, dtype=float)
    inp = np.asarray(inp, dtype=float)
    return np.array(_rk4(tuple(state), tuple(inp), float(sigma), float(dt)))


@dataclass(frozen=True)
class CarLayout:
    """Index bookkeeping for the stacked decision vector ``(x_0..x_{N+1}, u_0..u_N, sigma)``."""

    n_nodes: int
    fix_initial_heading: bool = True
    n_x: int = field(init=False)
    n_eq: int = field(init=False)
    n_in: int = field(init=False)

    def __post_init__(self):
        n = self.n_nodes
        object.__setattr__(self, "n_x", 5 * (n + 2) + 2 * (n + 1) + 1)
        object.__setattr__(self, "n_eq", 5 * (n + 1) + (9 if self.fix_initial_heading else 8))
        object.__setattr__(self, "n_in", 4 * (n + 1) + 1)

    @property
    def input_offset(self) -> int:
        return 5 * (self.n_nodes + 2)

    @property
    def sigma_index(self) -> int:
        return self.n_x - 1

    def states(self, x) -> np.ndarray:
        return np.asarray(x)[: self.input_offset].reshape(self.n_nodes + 2, 5)

    def inputs(self, x) -> np.ndarray:
        return np.asarray(x)[self.input_offset : self.sigma_index].reshape(self.n_nodes + 1, 2)

    def sigma(self, x) -> float:
        return float(x[self.sigma_index])

    def pack(self, states, inputs, sigma) -> np.ndarray:
        return np.concatenate([np.ravel(states), np.ravel(inputs), [sigma]])

    def local_indices(self) -> np.ndarray:
        """Global indices of ``(x_t, u_t, sigma)`` for each step, shape ``(N+1, 8)``."""
        t = np.arange(self.n_nodes + 1)[:, None]
        xs = 5 * t + np.arange(5)
        us = self.input_offset + 2 * t + np.arange(2)
        sg = np.full((self.n_nodes + 1, 1), self.sigma_index)
        return np.hstack([xs, us, sg])


def build_car_problem(config: CarProblemConfig = CarProblemConfig()) -> ParametricNlp:
    """Transcribed minimum-time problem; the parameter scales the throttle bound.

    Equalities: RK4 defects for ``t = 0..N`` followed by the boundary
    conditions (initial position and velocity, initial heading when
    ``fix_initial_heading``, terminal position and velocity).  Inequalities:
    four one-sided input bounds per step followed by ``sigma >= sigma_min``.
    """
    cfg = config
    lay = CarLayout(int(cfg.n_nodes), cfg.fix_initial_heading)
    n_steps = lay.n_nodes + 1
    dt = 1.0 / n_steps
    n_dyn = 5 * n_steps
    local = lay.local_indices()
    t_idx = np.arange(n_steps)

    init_rows = [0, 1, 2, 3, 4] if cfg.fix_initial_heading else [0, 1, 2, 3]
    term = 5 * (lay.n_nodes + 1)
    bc_index = np.array(init_rows + [term, term + 1, term + 2, term + 3])
    bc_value = np.array(
        [cfg.initial_state[i] for i in init_rows] + list(cfg.terminal_position) + list(cfg.terminal_velocity),
        dtype=float,
    )

    u1_idx = lay.input_offset + 2 * t_idx
    u2_idx = u1_idx + 1

    def split(x):
        xs = lay.states(x)
        us = lay.inputs(x)
        return xs, us, lay.sigma(x)

    def defects(x):
        xs, us, sg = split(x)
        nxt = np.array(_rk4(tuple(xs[:-1].T), tuple(us.T), sg, dt))  # (5, N+1)
        return (xs[1:] - nxt.T).ravel()

    def objective(x, theta):
        return x[lay.sigma_index]

    def inequality(x, theta):
        us = lay.inputs(x)
        b1 = cfg.throttle_scale * theta[0]
        b2 = cfg.steering_bound
        per_step = np.column_stack([us[:, 0] - b1, -us[:, 0] - b1, us[:, 1] - b2, -us[:, 1] - b2])
        return np.append(per_step.ravel(), cfg.sigma_min - lay.sigma(x))

    def equality(x, theta):
        return np.concatenate([defects(x), np.asarray(x)[bc_index] - bc_value])

    # Constant parts of the derivatives.
    jac_g = np.zeros((lay.n_in, lay.n_x))
    rows = 4 * t_idx
    jac_g[rows, u1_idx] = 1.0
    jac_g[rows + 1, u1_idx] = -1.0
    jac_g[rows + 2, u2_idx] = 1.0
    jac_g[rows + 3, u2_idx] = -1.0
    jac_g[-1, lay.sigma_index] = -1.0
    theta_jac_g = np.zeros((lay.n_in, 1))
    theta_jac_g[rows, 0] = -cfg.throttle_scale
    theta_jac_g[rows + 1, 0] = -cfg.throttle_scale
    grad_f = np.zeros(lay.n_x)
    grad_f[lay.sigma_index] = 1.0
    dyn_rows = 5 * t_idx[:, None] + np.arange(5)  # (N+1, 5)

    def derivatives(x, theta):
        x = np.asarray(x, dtype=float)
        vals = x[local]  # (N+1, 8)
        seeds = [ad.Jet(vals[:, k], np.broadcast_to(np.eye(8)[k], (n_steps, 8))) for k in range(8)]
        out = _rk4(tuple(seeds[:5]), tuple(seeds[5:7]), seeds[7], dt)
        grad_step = np.stack([o.grad for o in out], axis=1)  # (N+1, 5, 8)
        hess_step = np.stack([o.hessian() for o in out], axis=1)  # (N+1, 5, 8, 8)

        jac_h = np.zeros((lay.n_eq, lay.n_x))
        jac_h[dyn_rows[:, :, None], local[:, None, :]] -= grad_step
        next_states = 5 * (t_idx[:, None] + 1) + np.arange(5)
        jac_h[dyn_rows, next_states] += 1.0
        jac_h[n_dyn + np.arange(bc_index.size), bc_index] = 1.0

        def curvature(lam, nu):
            weights = np.asarray(nu, dtype=float)[:n_dyn].reshape(n_steps, 5)
            blocks = -np.einsum("tk,tkij->tij", weights, hess_step)
            hess = np.zeros((lay.n_x, lay.n_x))
            np.add.at(hess, (local[:, :, None], local[:, None, :]), blocks)
            return hess, np.zeros((lay.n_x, 1))

        return Derivatives(
            grad_f=grad_f.copy(),
            jac_g=jac_g.copy(),
            jac_h=jac_h,
            theta_jac_g=theta_jac_g.copy(),
            theta_jac_h=np.zeros((lay.n_eq, 1)),
            curvature=curvature,
        )

    def initializer(theta):
        n = lay.n_nodes + 2
        s = np.linspace(0.0, 1.0, n)
        start = np.asarray(cfg.initial_state[:2], dtype=float)
        goal = np.asarray(cfg.terminal_position, dtype=float)
        states = np.zeros((n, 5))
        states[:, :2] = start + s[:, None] * (goal - start)
        return lay.pack(states, np.zeros((n_steps, 2)), cfg.sigma_init)

    nlp = ParametricNlp(
        n_x=lay.n_x,
        n_in=lay.n_in,
        n_eq=lay.n_eq,
        n_theta=1,
        objective=objective,
        inequality=inequality,
        equality=equality,
        derivatives=derivatives,
        name=f"car_N{lay.n_nodes}",
        initializer=initializer,
        probe=(initializer(np.array([cfg.theta])) + 0.01, np.array([cfg.theta])),
        metadata={"layout": lay, "config": cfg},
    )
    return nlp


def interpolate_solution(x_coarse, coarse: CarLayout, fine: CarLayout) -> np.ndarray:
    """Resample a solution onto a finer grid in normalized time.

    States are interpolated linearly; each fine input takes the value of the
    coarse interval that contains its start time.
    """
    tau_c = np.arange(coarse.n_nodes + 2) / (coarse.n_nodes + 1)
    tau_f = np.arange(fine.n_nodes + 2) / (fine.n_nodes + 1)
    sc = coarse.states(x_coarse)
    states = np.column_stack([np.interp(tau_f, tau_c, sc[:, k]) for k in range(5)])
    cell = np.minimum((tau_f[:-1] * (coarse.n_nodes + 1)).astype(int), coarse.n_nodes)
    inputs = coarse.inputs(x_coarse)[cell]
    return fine.pack(states, inputs, coarse.sigma(x_coarse))


def solve_car(config: CarProblemConfig = CarProblemConfig(), options=None, coarse_nodes: int = 20):
    """Solve by continuation from a coarse grid; returns ``(nlp, point, trace)``.

    The transcription starts at rest, where steering has no effect, so a cold
    start on a fine grid can stall on a poor branch. The coarse solve is cheap
    and its interpolant pins the minimum-time branch.
    """
    from ..sqp import SolverOptions, solve

    options = options or SolverOptions()
    theta = np.array([config.theta])
    nlp = build_car_problem(config)
    init = None
    if coarse_nodes and coarse_nodes < config.n_nodes:
        coarse_cfg = replace(config, n_nodes=coarse_nodes)
        coarse_nlp, coarse_pt, coarse_trace = solve_car(coarse_cfg, options, coarse_nodes=0)
        if coarse_trace.converged:
            x0 = interpolate_solution(coarse_pt.x, coarse_nlp.metadata["layout"], nlp.metadata["layout"])
            init = PrimalDualPoint(theta=theta, x=x0, lam=np.zeros(nlp.n_in), nu=np.zeros(nlp.n_eq), kkt_residual_inf=np.inf)
    pt, trace = solve(nlp, theta, init=init, options=options)
    return nlp, pt, trace
