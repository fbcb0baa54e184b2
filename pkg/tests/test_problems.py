"""Problem builders: analytic QP, car maneuver, MPC closed loop and rho sweeps."""

import numpy as np
import pytest

from conftest import MPC_OPTIONS
from proxsens.errors import ConfigError, NonPositiveAlpha
from proxsens.model import PrimalDualPoint, kkt_residual_norms
from proxsens.oracle import FdOptions
from proxsens.problems.car import (
    CarLayout,
    CarProblemConfig,
    build_car_problem,
    car_rhs,
    interpolate_solution,
    rk4_dilated_step,
)
from proxsens.problems.mpc import (
    MpcConfig,
    build_mpc_problem,
    closed_loop_rollout,
    closed_loop_rollouts,
    mpc_sensitivity,
    plant_jacobians,
    plant_step,
    solve_mpc,
    stack_sensitivities,
)
from proxsens.problems.qp_example import build_qp_example
from proxsens.problems.sweep import log_grid, rho_grid_search, validate_grid


class TestQpExample:
    def test_dimensions(self):
        nlp = build_qp_example(1.0)
        assert (nlp.n_x, nlp.n_in, nlp.n_eq, nlp.n_theta) == (3, 0, 1, 1)

    def test_objective_value(self):
        f, _, h = build_qp_example(1.0).values(np.array([1.0, -0.5, -0.5]), np.array([1.0]))
        assert f == -0.5
        np.testing.assert_array_equal(h, [0.0])

    def test_any_split_is_a_kkt_point(self):
        nlp = build_qp_example(1.0)
        for x2 in (-3.0, -0.5, 2.0):
            pt = PrimalDualPoint.at(nlp, [1.0], [1.0, x2, -1.0 - x2], nu=[-1.0])
            assert pt.kkt_residual_inf == 0.0

    def test_alpha_two_even_split(self):
        nlp = build_qp_example(2.0)
        assert PrimalDualPoint.at(nlp, [2.0], [0.5, -0.25, -0.25], nu=[-1.0]).kkt_residual_inf == 0.0

    def test_nonpositive_alpha(self):
        for alpha in (0.0, -1.0):
            with pytest.raises(NonPositiveAlpha):
                build_qp_example(alpha)


class TestRk4:
    def test_rest_is_an_equilibrium(self):
        state = np.array([0.3, -0.2, 0.0, 0.0, 0.7])
        np.testing.assert_array_equal(rk4_dilated_step(state, [0.0, 0.0], 2.0, 0.1), state)

    def test_frozen_time(self):
        state = np.array([0.3, -0.2, 0.5, 0.1, 0.7])
        np.testing.assert_array_equal(rk4_dilated_step(state, [0.4, 0.2], 0.0, 0.1), state)

    def test_against_fine_integration(self):
        x0, u, dt = np.zeros(5), np.array([1.0, 0.0]), 0.1
        coarse = rk4_dilated_step(x0, u, 1.0, dt)
        fine = x0.copy()
        for _ in range(10000):
            fine = rk4_dilated_step(fine, u, 1.0, dt / 10000)
        np.testing.assert_allclose(coarse, fine, atol=1e-6)
        assert coarse[2] == pytest.approx(0.1) and coarse[0] == pytest.approx(0.005)

    def test_steering_couples_heading_to_velocity(self):
        x1 = rk4_dilated_step([0.0, 0.0, 1.0, 0.0, 0.0], [0.0, 0.5], 1.0, 0.01)
        assert x1[4] > 0

    def test_vector_field(self):
        assert car_rhs((0, 0, 1.0, 0.0, 0.0), (0.0, 2.0)) == (1.0, 0.0, 0.0, 0.0, 2.0)

    def test_nonpositive_dt(self):
        with pytest.raises(ValueError):
            rk4_dilated_step(np.zeros(5), np.zeros(2), 1.0, 0.0)


class TestCarProblem:
    def test_dimensions_with_free_initial_heading(self):
        lay = CarLayout(150, fix_initial_heading=False)
        assert (lay.n_x, lay.n_eq, lay.n_in) == (1063, 763, 605)

    def test_dimensions_with_fixed_initial_heading(self):
        nlp = build_car_problem(CarProblemConfig())
        assert (nlp.n_x, nlp.n_eq, nlp.n_in) == (1063, 764, 605)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            CarProblemConfig(n_nodes=1)
        with pytest.raises(ConfigError):
            CarProblemConfig(sigma_min=0.0)

    def test_cold_start_initializer_is_inside_bounds(self):
        nlp = build_car_problem(CarProblemConfig(n_nodes=10))
        x0 = nlp.initial_primal(np.array([1.0]))
        _, g, _ = nlp.values(x0, np.array([1.0]))
        assert g.max() <= 0.0
        lay = nlp.metadata["layout"]
        assert lay.sigma(x0) == 5.0
        np.testing.assert_allclose(lay.states(x0)[-1, :2], [0.5, 0.25])

    def test_throttle_bound_scales_with_theta(self):
        nlp = build_car_problem(CarProblemConfig(n_nodes=4))
        lay = nlp.metadata["layout"]
        x = lay.pack(np.zeros((6, 5)), np.tile([0.8, 0.0], (5, 1)), 1.0)
        assert nlp.values(x, np.array([1.0]))[1].max() > 0
        assert nlp.values(x, np.array([1.2]))[1].max() <= 0

    def test_interpolation_preserves_endpoints(self):
        coarse, fine = CarLayout(5), CarLayout(12)
        rng = np.random.default_rng(0)
        x = rng.standard_normal(coarse.n_x)
        y = interpolate_solution(x, coarse, fine)
        np.testing.assert_allclose(fine.states(y)[[0, -1]], coarse.states(x)[[0, -1]])
        assert fine.sigma(y) == coarse.sigma(x)


class TestMpcProblem:
    def test_origin_is_optimal(self):
        cfg = MpcConfig()
        nlp = build_mpc_problem((0.0, 0.0), 0.5, cfg)
        pt = PrimalDualPoint.at(nlp, [0.0, 0.0, 0.5], np.zeros(nlp.n_x))
        assert max(kkt_residual_norms(nlp, pt)) == 0.0
        assert nlp.objective(pt.x, pt.theta) == 0.0

    def test_first_stage_cost(self):
        nlp = build_mpc_problem()
        lay = nlp.metadata["layout"]
        states = np.zeros((lay.horizon + 1, 2))
        states[0] = (3.0, 0.0)
        for u in (0.0, 1.5):
            x = lay.pack(states, np.full(lay.horizon, u))
            assert nlp.objective(x, np.array([3.0, 0.0, 0.5])) == pytest.approx(0.09)

    def test_nominal_instance_is_feasible(self, mpc_instance):
        nlp, pt = mpc_instance
        _, g, h = nlp.values(pt.x, pt.theta)
        assert g.max() <= 1e-9
        assert np.abs(h).max() <= 1e-9

    def test_plant_jacobians_match_finite_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            s, u, th = rng.standard_normal(2), rng.standard_normal(), rng.uniform(0, 1)
            fx, fu, fth = plant_jacobians(s, u, th)
            h = 1e-6
            num_x = np.column_stack(
                [(np.array(plant_step(s + h * e, u, th)) - np.array(plant_step(s - h * e, u, th))) / (2 * h) for e in np.eye(2)]
            )
            np.testing.assert_allclose(fx, num_x, atol=1e-8)
            np.testing.assert_allclose(fu, (np.array(plant_step(s, u + h, th)) - np.array(plant_step(s, u - h, th))) / (2 * h), atol=1e-8)
            np.testing.assert_allclose(fth, (np.array(plant_step(s, u, th + h)) - np.array(plant_step(s, u, th - h))) / (2 * h), atol=1e-8)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            MpcConfig(horizon=0)
        with pytest.raises(ConfigError):
            MpcConfig(input_bound=-1.0)


@pytest.fixture(scope="module")
def rollout():
    return closed_loop_rollout(0.5, MpcConfig(), rho=3e-7, solver_options=MPC_OPTIONS, rollout_length=200)


class TestClosedLoop:
    def test_single_step_from_origin(self):
        traj = closed_loop_rollout(0.5, MpcConfig(initial_state=(0.0, 0.0)), rho=1e-6, rollout_length=1)
        np.testing.assert_array_equal(traj.states, 0.0)
        np.testing.assert_array_equal(traj.inputs, 0.0)
        np.testing.assert_array_equal(traj.state_sensitivities, 0.0)

    def test_replay_matches_plant(self, rollout):
        for t in range(rollout.inputs.size):
            np.testing.assert_allclose(
                rollout.states[t + 1], plant_step(rollout.states[t], rollout.inputs[t], 0.5), atol=1e-12, rtol=0
            )

    def test_state_stays_bounded(self, rollout):
        assert np.all(np.isfinite(rollout.states))
        assert np.abs(rollout.states).max() <= 3.0 + 1e-12
        assert np.abs(rollout.inputs).max() <= 2.0 + 1e-9

    def test_sensitivities_follow_the_propagation_recursion(self, rollout):
        dx, du, jac = rollout.state_sensitivities, rollout.input_sensitivities, rollout.policy_jacobians
        assert np.all(dx[0] == 0.0)
        for t in range(du.size):
            fx, fu, fth = plant_jacobians(rollout.states[t], rollout.inputs[t], 0.5)
            assert du[t] == pytest.approx(jac[t, :2] @ dx[t] + jac[t, 2], abs=1e-14)
            np.testing.assert_allclose(dx[t + 1], fx @ dx[t] + fth + fu * du[t], atol=1e-14)

    def test_rho_zero_uses_least_squares(self, mpc_instance):
        nlp, pt = mpc_instance
        from proxsens.sensitivity import least_squares_jacobian

        np.testing.assert_array_equal(mpc_sensitivity(nlp, pt, 0.0), least_squares_jacobian(nlp, pt).dx_dtheta)

    def test_shared_solves_give_identical_trajectories(self):
        trajs = closed_loop_rollouts(0.5, MpcConfig(), rhos=(0.0, 1e-6), rollout_length=5)
        assert trajs[0].states.tobytes() == trajs[1].states.tobytes()

    def test_stacking(self):
        v = stack_sensitivities(np.ones((3, 2)), np.zeros(2))
        assert v.shape == (8,) and v[:6].sum() == 6

    def test_negative_rho_rejected(self):
        with pytest.raises(ConfigError):
            closed_loop_rollouts(0.5, MpcConfig(), rhos=(-1.0,), rollout_length=1)


class TestSweep:
    def test_log_grid(self):
        g = log_grid(1e-9, 1e-5, 51)
        assert len(g) == 51 and g[0] == pytest.approx(1e-9) and g[-1] == pytest.approx(1e-5)
        assert log_grid(1e-3, 1.0, 1) == [1e-3]

    def test_grid_validation(self):
        with pytest.raises(ConfigError):
            validate_grid([])
        with pytest.raises(ConfigError):
            validate_grid([1e-3, -1e-3])
        with pytest.raises(ConfigError):
            log_grid(0.0, 1.0, 3)

    def test_reproducible_bit_for_bit(self, mpc_instance):
        nlp, pt = mpc_instance
        grid = [0.0, 1e-7, 1e-6]
        a = rho_grid_search(nlp, pt, grid, FdOptions(step=1e-8), MPC_OPTIONS)
        b = rho_grid_search(nlp, pt, grid, FdOptions(step=1e-8), MPC_OPTIONS)
        assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
        assert [r.rho for r in a.rows] == grid

    def test_warm_solve_matches_cold(self, mpc_instance):
        nlp, pt = mpc_instance
        again = solve_mpc(nlp, pt.theta, MPC_OPTIONS, warm=pt)
        np.testing.assert_allclose(again.x, pt.x, atol=1e-10)
