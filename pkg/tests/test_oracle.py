"""Finite-difference reference Jacobians and comparison metrics."""

import numpy as np
import pytest

from conftest import qp_point
from proxsens.errors import BranchJump, ZeroReference
from proxsens.model import ParametricNlp, PrimalDualPoint
from proxsens.oracle import FdOptions, compare, fd_solver_options, finite_difference_jacobian
from proxsens.sqp import SolverOptions, solve


def _scalar_projection():
    return ParametricNlp.from_functions(lambda x, t: 0.5 * (x[0] - t[0]) ** 2, n_x=1, n_theta=1)


class TestFiniteDifference:
    def test_scalar_projection(self):
        nlp = _scalar_projection()
        pt = PrimalDualPoint.at(nlp, [0.3], [0.3])
        res = finite_difference_jacobian(nlp, pt, FdOptions(step=1e-6))
        assert res.dx_dtheta[0, 0] == pytest.approx(1.0, abs=1e-9)
        assert str(res.method) == "finite_difference(step=1e-06)"

    def test_qp_example_warm_branch(self):
        nlp, pt = qp_point(1.0)
        res = finite_difference_jacobian(nlp, pt, FdOptions(step=1e-5))
        np.testing.assert_allclose(res.dx_dtheta[:, 0], [-1.0, 0.5, 0.5], atol=1e-8)

    def test_qp_example_is_branch_stable(self):
        nlp, pt = qp_point(1.0)
        a = finite_difference_jacobian(nlp, pt, FdOptions(step=1e-5)).dx_dtheta
        b = finite_difference_jacobian(nlp, pt, FdOptions(step=1e-5)).dx_dtheta
        assert a.tobytes() == b.tobytes()

    def test_forward_scheme(self):
        nlp = _scalar_projection()
        pt = PrimalDualPoint.at(nlp, [0.3], [0.3])
        res = finite_difference_jacobian(nlp, pt, FdOptions(step=1e-6, scheme="forward"))
        assert res.dx_dtheta[0, 0] == pytest.approx(1.0, abs=1e-8)

    def test_branch_jump_detected(self):
        # Minimizers at x = +-1 when theta = 0; cold starts go to the negative one.
        nlp = ParametricNlp.from_functions(
            lambda x, t: 0.25 * (x[0] ** 2 - 1.0) ** 2 - t[0] * x[0],
            n_x=1,
            n_theta=1,
            initializer=lambda t: np.array([-1.5]),
        )
        pt = PrimalDualPoint.at(nlp, [0.0], [1.0])
        warm = finite_difference_jacobian(nlp, pt, FdOptions(step=1e-5))
        assert warm.dx_dtheta[0, 0] == pytest.approx(0.5, rel=1e-6)
        with pytest.raises(BranchJump):
            finite_difference_jacobian(nlp, pt, FdOptions(step=1e-5, warm_start=False))

    def test_central_difference_error_is_quadratic(self):
        # x(theta) = theta**(1/3) solves min x**4 / 4 - theta x.
        nlp = ParametricNlp.from_functions(lambda x, t: 0.25 * x[0] ** 4 - t[0] * x[0], n_x=1, n_theta=1)
        theta = 2.0
        tight = SolverOptions(kkt_tolerance=1e-14)
        pt, _ = solve(nlp, [theta], options=tight)
        exact = theta ** (-2.0 / 3.0) / 3.0
        # Below 1e-4 the truncation error drops under rounding noise of order eps / step.
        steps = np.logspace(-4, -1, 7)
        errs = [
            abs(finite_difference_jacobian(nlp, pt, FdOptions(step=h, trust_factor=1e3), tight).dx_dtheta[0, 0] - exact)
            for h in steps
        ]
        slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.2)

    def test_solver_tolerance_follows_step(self):
        assert fd_solver_options(SolverOptions(), 1e-5).kkt_tolerance == pytest.approx(1e-8)
        assert fd_solver_options(SolverOptions(), 1e-8).kkt_tolerance == pytest.approx(1e-11)

    def test_invalid_options(self):
        with pytest.raises(ValueError):
            FdOptions(step=0.0)
        with pytest.raises(ValueError):
            FdOptions(scheme="backward")


class TestCompare:
    def test_identical(self):
        j = np.array([[1.0, -2.0], [0.5, 3.0]])
        m = compare(j, j)
        assert m.relative_error_inf == 0.0
        assert m.cosine_similarity == pytest.approx(1.0)

    def test_negated(self):
        j = np.array([1.0, -2.0, 0.5])
        assert compare(-j, j).cosine_similarity == pytest.approx(-1.0)
        assert compare(-j, j).relative_error_inf == pytest.approx(2.0)

    def test_relative_error_uses_reference_norm(self):
        a = np.array([[1.0, 0.0]])
        b = np.array([[2.0, 0.0]])
        assert compare(a, b).relative_error_inf == pytest.approx(0.5)
        assert compare(b, a).relative_error_inf == pytest.approx(1.0)

    def test_induced_infinity_norm(self):
        ref = np.array([[1.0, 1.0], [0.0, 0.5]])
        cand = ref + np.array([[0.1, 0.1], [0.0, 0.0]])
        assert compare(cand, ref).relative_error_inf == pytest.approx(0.1)

    def test_zero_reference(self):
        with pytest.raises(ZeroReference):
            compare(np.ones(2), np.zeros(2))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            compare(np.ones((2, 1)), np.ones((1, 2)))
