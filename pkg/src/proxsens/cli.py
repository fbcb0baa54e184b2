"""Command-line front end for the bundled experiments.

Every run writes a CSV table (``rho,relative_error_inf,cosine_similarity``)
and/or a JSON document with the same rows plus metadata.  Settings come from
an optional JSON config file and are overridden by flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoError, ProxSensError, SolverFailure
from .oracle import FdOptions, compare
from .report import ExperimentReport, ReportRow, emit_report
from .sensitivity import SIGN_CONVENTION
from .sqp import SolverOptions

__all__ = ["RunConfig", "build_parser", "load_config", "run", "main", "EXIT_CODES"]

EXPERIMENTS = ("qp", "car", "mpc-instance", "mpc-rollout", "sweep")
SWEEP_PROBLEMS = ("qp", "car", "mpc-instance", "mpc-rollout")
EXIT_CODES = {ConfigError: 2, SolverFailure: 3, IoError: 4}

# Default grid for the MPC studies: 51 log-spaced values plus rho = 0.
MPC_GRID = (1e-9, 1e-5, 51)


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "qp"
    problem: str = "qp"  # target of ``sweep``
    alpha: float = 1.0
    theta: float | None = None
    nodes: int = 150
    rollout_length: int = 200
    rho: float | None = None
    rho_grid: tuple | None = None  # (start, stop, count)
    include_zero: bool = True
    fd_step: float | None = None
    kkt_tol: float | None = None
    out_csv: str | None = None
    out_json: str | None = None
    seed: int = 0

    @property
    def target(self) -> str:
        return self.problem if self.experiment == "sweep" else self.experiment

    def validate(self) -> "RunConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.problem not in SWEEP_PROBLEMS:
            raise ConfigError(f"unknown sweep problem {self.problem!r}")
        if self.experiment == "sweep" and self.rho_grid is None:
            raise ConfigError("sweep needs --rho-grid start,stop,count")
        if self.rho is not None and self.rho_grid is not None:
            raise ConfigError("give either --rho or --rho-grid, not both")
        if self.rho is not None and not (np.isfinite(self.rho) and self.rho >= 0):
            raise ConfigError("rho must be finite and nonnegative")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.nodes < 2 or self.rollout_length < 1:
            raise ConfigError("nodes must be >= 2 and rollout length >= 1")
        for name in ("fd_step", "kkt_tol"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        self.grid()
        return self

    def grid(self) -> list[float]:
        from .problems.sweep import log_grid, validate_grid

        if self.rho is not None:
            return validate_grid([self.rho])
        if self.rho_grid is None:
            return validate_grid(_default_grid(self.target))
        spec = tuple(self.rho_grid)
        if len(spec) != 3:
            raise ConfigError("rho grid needs start,stop,count")
        start, stop, count = float(spec[0]), float(spec[1]), spec[2]
        if int(count) != count or int(count) < 1:
            raise ConfigError("rho grid count must be a positive integer")
        values = log_grid(start, stop, int(count))
        return validate_grid(([0.0] if self.include_zero else []) + values)


def _default_grid(target: str) -> list[float]:
    from .problems.sweep import log_grid
    from .sensitivity import DEFAULT_RHO

    if target in ("mpc-instance", "mpc-rollout"):
        return [0.0] + log_grid(*MPC_GRID)
    if target == "car":
        return [0.0, DEFAULT_RHO]
    return [DEFAULT_RHO]


def _parse_grid(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--rho-grid expects start,stop,count, got {text!r}")
    try:
        return float(parts[0]), float(parts[1]), float(parts[2])
    except ValueError as exc:
        raise ConfigError(f"bad --rho-grid value {text!r}") from exc


def load_config(path) -> dict:
    """Read a JSON config; keys are :class:`RunConfig` field names (dashes allowed)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    names = {f.name for f in fields(RunConfig)}
    out = {}
    for key, value in data.items():
        k = key.replace("-", "_")
        if k not in names:
            raise ConfigError(f"unknown config key {key!r}")
        if k == "rho_grid" and isinstance(value, str):
            value = _parse_grid(value)
        elif k == "rho_grid" and value is not None:
            value = tuple(value)
        out[k] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--alpha", type=float, help="curvature of the analytic QP")
    common.add_argument("--theta", type=float, help="problem parameter (car throttle scale, MPC plant gain)")
    common.add_argument("--nodes", type=int, help="car transcription steps N")
    common.add_argument("--rollout-length", type=int, help="closed-loop steps T")
    common.add_argument("--rho", type=float, help="single proximal parameter")
    common.add_argument("--rho-grid", help="log grid start,stop,count")
    common.add_argument("--include-zero", action=argparse.BooleanOptionalAction, default=None,
                        help="prepend rho = 0 (least squares) to a --rho-grid")
    common.add_argument("--fd-step", type=float, help="finite-difference step")
    common.add_argument("--kkt-tol", type=float, help="solver KKT tolerance")
    common.add_argument("--out-csv", help="CSV output path")
    common.add_argument("--out-json", help="JSON output path")
    common.add_argument("--seed", type=int, help="seed for randomized probes")

    parser = argparse.ArgumentParser(prog="proxsens", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="experiment", required=True)
    sub.add_parser("qp", parents=[common], help="analytic equality-constrained QP")
    sub.add_parser("car", parents=[common], help="minimum-time car maneuver")
    sub.add_parser("mpc-instance", parents=[common], help="rho grid on one MPC problem")
    sub.add_parser("mpc-rollout", parents=[common], help="closed-loop MPC derivative")
    sw = sub.add_parser("sweep", parents=[common], help="rho grid on any of the problems")
    sw.add_argument("--problem", choices=SWEEP_PROBLEMS, default=None, help="problem to sweep (default qp)")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    values["experiment"] = args.experiment
    flag_map = {
        "alpha": args.alpha,
        "theta": args.theta,
        "nodes": args.nodes,
        "rollout_length": args.rollout_length,
        "rho": args.rho,
        "rho_grid": _parse_grid(args.rho_grid) if args.rho_grid else None,
        "include_zero": args.include_zero,
        "fd_step": args.fd_step,
        "kkt_tol": args.kkt_tol,
        "out_csv": args.out_csv,
        "out_json": args.out_json,
        "seed": args.seed,
        "problem": getattr(args, "problem", None),
    }
    for key, value in flag_map.items():
        if value is not None:
            values[key] = value
    # A flag for one grid form replaces the other form from the config file.
    if args.rho is not None and args.rho_grid is None:
        values["rho_grid"] = None
    if args.rho_grid is not None and args.rho is None:
        values["rho"] = None
    try:
        return RunConfig(**values).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _check_writable(path) -> None:
    if path is None:
        return
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise IoError(f"output directory {parent} is not writable")


# -- experiments -----------------------------------------------------------------------


def _solver_options(cfg: RunConfig, default_tol: float) -> SolverOptions:
    return SolverOptions(kkt_tolerance=cfg.kkt_tol or default_tol, max_iterations=300)


def _run_qp(cfg: RunConfig, grid) -> ExperimentReport:
    from .problems.qp_example import build_qp_example, qp_example_limit, qp_example_solution
    from .problems.sweep import jacobian_for_rho
    from .model import PrimalDualPoint

    a = cfg.alpha
    nlp = build_qp_example(a)
    x = qp_example_solution(a)
    pt = PrimalDualPoint(theta=np.array([a]), x=x, lam=np.zeros(0), nu=np.array([-1.0]), kkt_residual_inf=0.0)
    reference = qp_example_limit(a)
    rows, jacobians = [], []
    for rho in grid:
        jac = jacobian_for_rho(nlp, pt, rho)[:, 0]
        m = compare(jac, reference)
        rows.append(ReportRow(rho, m.relative_error_inf, m.cosine_similarity))
        jacobians.append({"rho": rho, "dx_dtheta": jac.tolist()})
    meta = {"alpha": a, "reference": "rho -> 0 limit of the surrogate Jacobian", "jacobians": jacobians}
    return ExperimentReport(tuple(rows), meta)


def _run_car(cfg: RunConfig, grid) -> ExperimentReport:
    from .oracle import finite_difference_jacobian
    from .problems.car import CarProblemConfig, solve_car
    from .problems.sweep import jacobian_for_rho
    from .sensitivity import lift_to_slack

    theta = 1.0 if cfg.theta is None else cfg.theta
    step = cfg.fd_step or 1e-5
    options = _solver_options(cfg, 1e-8)
    nlp, pt, trace = solve_car(CarProblemConfig(n_nodes=cfg.nodes, theta=theta), options)
    if not trace.converged:
        raise SolverFailure(f"car solve ended with {trace.status.value}")
    fd = finite_difference_jacobian(nlp, pt, FdOptions(step=step), options)
    lifted = lift_to_slack(nlp, pt)
    rows = []
    for rho in grid:
        m = compare(jacobian_for_rho(nlp, pt, rho, lifted), fd)
        rows.append(ReportRow(rho, m.relative_error_inf, m.cosine_similarity))
    meta = {
        "theta": theta,
        "nodes": cfg.nodes,
        "fd_step": step,
        "sigma": nlp.metadata["layout"].sigma(pt.x),
        "solver": trace.summary(),
    }
    return ExperimentReport(tuple(rows), meta)


def _run_mpc_instance(cfg: RunConfig, grid) -> ExperimentReport:
    from .problems.mpc import NOMINAL_THETA, MpcConfig, build_mpc_problem, solve_mpc
    from .problems.sweep import rho_grid_search

    theta = NOMINAL_THETA if cfg.theta is None else cfg.theta
    step = cfg.fd_step or 1e-8
    mpc = MpcConfig()
    options = _solver_options(cfg, 1e-11)
    nlp = build_mpc_problem(mpc.initial_state, theta, mpc)
    pt = solve_mpc(nlp, [*mpc.initial_state, theta], options)
    meta = {"initial_state": list(mpc.initial_state), "horizon": mpc.horizon, "kkt_tolerance": options.kkt_tolerance}
    return rho_grid_search(nlp, pt, grid, FdOptions(step=step), options, metadata=meta)


def _run_mpc_rollout(cfg: RunConfig, grid) -> ExperimentReport:
    from .problems.mpc import NOMINAL_THETA, MpcConfig, closed_loop_report

    theta = NOMINAL_THETA if cfg.theta is None else cfg.theta
    step = cfg.fd_step or 1e-8
    return closed_loop_report(theta, MpcConfig(), grid, step, _solver_options(cfg, 1e-11), cfg.rollout_length)


RUNNERS = {"qp": _run_qp, "car": _run_car, "mpc-instance": _run_mpc_instance, "mpc-rollout": _run_mpc_rollout}


def run(cfg: RunConfig) -> ExperimentReport:
    """Run the configured experiment and write its outputs."""
    cfg = cfg.validate()
    _check_writable(cfg.out_csv)
    _check_writable(cfg.out_json)
    grid = cfg.grid()
    report = RUNNERS[cfg.target](cfg, grid)
    meta = {
        "experiment": cfg.experiment,
        "problem": cfg.target,
        "config": asdict(cfg),
        "sign_convention": SIGN_CONVENTION,
        "rho_zero_method": "least squares on the classical system",
    }
    meta.update(report.metadata)
    report = replace(report, metadata=meta)
    if cfg.out_csv is None and cfg.out_json is None:
        sys.stdout.write(report.to_csv())
    else:
        emit_report(report, cfg.out_csv, cfg.out_json)
    return report


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run(config_from_args(args))
    except ProxSensError as exc:
        code = next((c for t, c in EXIT_CODES.items() if isinstance(exc, t)), 1)
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
