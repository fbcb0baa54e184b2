"""KKT evaluation, residual norms, active sets and regularity checks."""

import numpy as np
import pytest

from _problems import projection_problem, random_problem
from conftest import qp_point
from proxsens.errors import DimensionMismatch, EvaluatorFailure
from proxsens.model import (
    Derivatives,
    ParametricNlp,
    PrimalDualPoint,
    check_regularity,
    detect_active_set,
    evaluate_kkt,
    kkt_residual_norms,
)


def _constant_g(values):
    """Problem in one variable whose inequality values are the given constants."""
    values = np.asarray(values, dtype=float)
    return ParametricNlp.from_functions(
        lambda x, t: 0.5 * x[0] ** 2,
        lambda x, t: values + 0.0 * x[0],
        None,
        n_x=1,
        n_theta=1,
    )


class TestEvaluateKkt:
    def test_qp_solution_has_zero_residual(self):
        nlp, pt = qp_point(1.0)
        kkt = evaluate_kkt(nlp, pt)
        np.testing.assert_array_equal(kkt.stationarity, 0.0)
        np.testing.assert_array_equal(kkt.lagrangian_hessian, np.diag([1.0, 0.0, 0.0]))
        assert max(kkt_residual_norms(nlp, pt)) == 0.0

    def test_unconstrained_origin(self):
        nlp = ParametricNlp.from_functions(lambda x, t: 0.5 * (x @ x), n_x=3, n_theta=1)
        pt = PrimalDualPoint.at(nlp, [0.0], np.zeros(3))
        kkt = evaluate_kkt(nlp, pt)
        np.testing.assert_array_equal(kkt.lagrangian_hessian, np.eye(3))
        assert kkt_residual_norms(nlp, pt) == (0.0, 0.0, 0.0)

    def test_qp_off_solution_stationarity(self):
        nlp, _ = qp_point(1.0)
        pt = PrimalDualPoint.at(nlp, [1.0], [2.0, -1.0, -1.0], nu=[-1.0])
        kkt = evaluate_kkt(nlp, pt)
        np.testing.assert_allclose(kkt.stationarity, [1.0, 0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(kkt.h, [0.0], atol=1e-15)

    def test_qp_zero_multiplier_stationarity(self):
        nlp, _ = qp_point(1.0)
        pt = PrimalDualPoint.at(nlp, [1.0], [1.0, -0.5, -0.5], nu=[0.0])
        stat, feas, comp = kkt_residual_norms(nlp, pt)
        assert stat == pytest.approx(1.0)
        assert feas == 0.0 and comp == 0.0

    def test_dimension_mismatch(self):
        nlp, _ = qp_point(1.0)
        with pytest.raises(DimensionMismatch):
            PrimalDualPoint.at(nlp, [1.0], [1.0, 0.0])

    def test_non_finite_evaluator(self):
        nlp = ParametricNlp.from_functions(lambda x, t: np.log(x[0]), n_x=1, n_theta=1, probe=([1.0], [0.0]))
        with np.errstate(invalid="ignore"), pytest.raises(EvaluatorFailure):
            PrimalDualPoint.at(nlp, [0.0], [-1.0])

    def test_asymmetric_hand_hessian_rejected(self):
        def derivatives(x, theta):
            return Derivatives(
                grad_f=np.zeros(2),
                jac_g=np.zeros((0, 2)),
                jac_h=np.zeros((0, 2)),
                theta_jac_g=np.zeros((0, 1)),
                theta_jac_h=np.zeros((0, 1)),
                curvature=lambda lam, nu: (np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros((2, 1))),
            )

        with pytest.raises(EvaluatorFailure):
            ParametricNlp(2, 0, 0, 1, lambda x, t: 0.0, lambda x, t: np.zeros(0), lambda x, t: np.zeros(0), derivatives)

    def test_complementarity_includes_sign_violation(self):
        nlp = _constant_g([-0.5])
        pt = PrimalDualPoint(theta=[0.0], x=[0.0], lam=[-1e-9], nu=[], kkt_residual_inf=np.nan)
        _, _, comp = kkt_residual_norms(nlp, pt)
        assert comp >= 1e-9


class TestActiveSet:
    def test_exact_zero(self):
        nlp = _constant_g([-0.5, 0.0])
        part = detect_active_set(nlp, PrimalDualPoint.at(nlp, [0.0], [0.0]), 1e-6)
        assert part.active == (1,) and part.inactive == (0,)

    def test_threshold_rule(self):
        nlp = _constant_g([-1e-9])
        assert detect_active_set(nlp, PrimalDualPoint.at(nlp, [0.0], [0.0]), 1e-6).active == (0,)

    def test_all_inactive(self):
        nlp = _constant_g([-0.1, -0.3, -2.0])
        assert detect_active_set(nlp, PrimalDualPoint.at(nlp, [0.0], [0.0]), 1e-6).active == ()

    def test_nonpositive_tolerance(self):
        nlp = _constant_g([-0.1])
        with pytest.raises(ValueError):
            detect_active_set(nlp, PrimalDualPoint.at(nlp, [0.0], [0.0]), 0.0)


class TestRegularity:
    def test_qp_example(self):
        nlp, pt = qp_point(1.0)
        rep = check_regularity(nlp, pt)
        assert rep.licq and rep.min_singular_value == pytest.approx(np.sqrt(3.0))
        assert rep.scs and rep.min_active_multiplier == np.inf
        assert not rep.ssosc
        assert abs(rep.min_reduced_eigenvalue) < 1e-12

    def test_projection(self):
        nlp = projection_problem(2)
        pt = PrimalDualPoint.at(nlp, [1.0, 2.0], [1.0, 2.0])
        assert check_regularity(nlp, pt).all_hold

    def test_random_constructed_problems_are_regular(self):
        for seed in range(10):
            kp = random_problem(seed)
            rep = check_regularity(kp.nlp, kp.point)
            assert rep.all_hold
            assert rep.partition.active == kp.active

    def test_rejects_non_kkt_point(self):
        nlp, _ = qp_point(1.0)
        pt = PrimalDualPoint.at(nlp, [1.0], [2.0, -1.0, -1.0], nu=[-1.0])
        with pytest.raises(ValueError):
            check_regularity(nlp, pt)

    def test_weakly_active_constraint_breaks_scs(self):
        nlp = ParametricNlp.from_functions(
            lambda x, t: 0.5 * (x[0] - t[0]) ** 2, lambda x, t: np.array([x[0]]), None, n_x=1, n_theta=1
        )
        rep = check_regularity(nlp, PrimalDualPoint.at(nlp, [0.0], [0.0], lam=[0.0]))
        assert rep.licq and not rep.scs and rep.ssosc
