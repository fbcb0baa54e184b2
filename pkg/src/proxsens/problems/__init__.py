"""Problem builders: the analytic QP, the car maneuver and the MPC closed loop."""

from .car import CarLayout, CarProblemConfig, build_car_problem, interpolate_solution, rk4_dilated_step, solve_car
from .mpc import (
    NOMINAL_THETA,
    ClosedLoopTrajectory,
    MpcConfig,
    MpcLayout,
    build_mpc_problem,
    closed_loop_finite_difference,
    closed_loop_report,
    closed_loop_rollout,
    closed_loop_rollouts,
    solve_mpc,
)
from .qp_example import build_qp_example, qp_example_limit, qp_example_solution, qp_example_surrogate
from .sweep import jacobian_for_rho, log_grid, rho_grid_search, validate_grid

__all__ = [
    "CarLayout",
    "CarProblemConfig",
    "build_car_problem",
    "interpolate_solution",
    "rk4_dilated_step",
    "solve_car",
    "NOMINAL_THETA",
    "ClosedLoopTrajectory",
    "MpcConfig",
    "MpcLayout",
    "build_mpc_problem",
    "closed_loop_finite_difference",
    "closed_loop_report",
    "closed_loop_rollout",
    "closed_loop_rollouts",
    "solve_mpc",
    "build_qp_example",
    "qp_example_solution",
    "qp_example_surrogate",
    "qp_example_limit",
    "jacobian_for_rho",
    "log_grid",
    "rho_grid_search",
    "validate_grid",
]
