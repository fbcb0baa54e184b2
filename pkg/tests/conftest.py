"""Shared fixtures; expensive solves are computed once per session."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from proxsens.model import PrimalDualPoint  # noqa: E402
from proxsens.oracle import FdOptions, finite_difference_jacobian  # noqa: E402
from proxsens.problems.car import CarProblemConfig, solve_car  # noqa: E402
from proxsens.problems.mpc import NOMINAL_THETA, MpcConfig, build_mpc_problem, solve_mpc  # noqa: E402
from proxsens.problems.qp_example import build_qp_example, qp_example_solution  # noqa: E402
from proxsens.sqp import SolverOptions  # noqa: E402

CAR_OPTIONS = SolverOptions(kkt_tolerance=1e-8, max_iterations=300)
MPC_OPTIONS = SolverOptions(kkt_tolerance=1e-11, max_iterations=300)


def qp_point(alpha: float) -> tuple:
    """Example QP and its even-split KKT point."""
    nlp = build_qp_example(alpha)
    pt = PrimalDualPoint.at(nlp, [alpha], qp_example_solution(alpha), nu=[-1.0])
    return nlp, pt


@pytest.fixture(scope="session")
def car_solution():
    """``(nlp, point, trace)`` for the car problem at N = 150, theta = 1."""
    return solve_car(CarProblemConfig(), CAR_OPTIONS)


@pytest.fixture(scope="session")
def car_fd(car_solution):
    nlp, pt, _ = car_solution
    return finite_difference_jacobian(nlp, pt, FdOptions(step=1e-5), CAR_OPTIONS)


@pytest.fixture(scope="session")
def mpc_instance():
    """``(nlp, point)`` of the MPC problem at state (3, 0) and the nominal theta."""
    cfg = MpcConfig()
    nlp = build_mpc_problem(cfg.initial_state, NOMINAL_THETA, cfg)
    pt = solve_mpc(nlp, np.array([*cfg.initial_state, NOMINAL_THETA]), MPC_OPTIONS)
    return nlp, pt


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
