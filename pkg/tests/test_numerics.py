"""Forward-mode AD, the LDL^T wrapper and the elastic active-set QP."""

import itertools

import numpy as np
import pytest

from proxsens.ad import second_order
from proxsens.linalg import LdlFactorization, condition_inf, min_norm_lstsq
from proxsens.qp import ElasticQp, NonConvexSubproblem, QpStatus


def _central_gradient(fun, x, step=1e-6):
    out = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        out.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * step))
    return np.stack(out, axis=-1)


class TestAutodiff:
    def test_scalar_function_matches_hand_derivatives(self):
        def f(x, t):
            return np.sin(x[0]) * x[1] ** 2 + t[0] * np.exp(x[0] * x[1])

        x, t = np.array([0.3, -0.7]), np.array([1.5])
        val, grad, joint = second_order(f, x, t, scalar=True)
        hess, cross = joint[:2, :2], joint[:2, 2]
        e = np.exp(x[0] * x[1])
        assert val == pytest.approx(f(x, t))
        np.testing.assert_allclose(
            grad[:2], [np.cos(x[0]) * x[1] ** 2 + t[0] * x[1] * e, 2 * np.sin(x[0]) * x[1] + t[0] * x[0] * e], rtol=1e-14
        )
        assert grad[2] == pytest.approx(e, rel=1e-14)
        h01 = 2 * np.cos(x[0]) * x[1] + t[0] * e * (1 + x[0] * x[1])
        np.testing.assert_allclose(
            hess,
            [[-np.sin(x[0]) * x[1] ** 2 + t[0] * x[1] ** 2 * e, h01], [h01, 2 * np.sin(x[0]) + t[0] * x[0] ** 2 * e]],
            rtol=1e-13,
        )
        np.testing.assert_allclose(cross, [x[1] * e, x[0] * e], rtol=1e-14)

    def test_vector_function_gradient_matches_finite_differences(self):
        def g(x, t):
            return np.array([x[0] * x[1] - t[0], np.sqrt(1.0 + x[1] ** 2), np.tanh(x[0]) / (2.0 + x[1])])

        rng = np.random.default_rng(3)
        for _ in range(20):
            x, t = rng.standard_normal(2), rng.standard_normal(1)
            _, jac, _ = second_order(g, x, t)
            fd = _central_gradient(lambda y: g(y[:2], y[2:]), np.concatenate([x, t]))
            np.testing.assert_allclose(jac, fd, rtol=1e-5, atol=1e-8)


class TestLdl:
    def test_inertia_of_saddle_point_matrix(self):
        k = np.array([[2.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
        f = LdlFactorization(k)
        assert (f.inertia.positive, f.inertia.negative, f.inertia.zero) == (2, 1, 0)
        b = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(k @ f.solve(b), b, atol=1e-14)

    def test_singular_matrix_detected(self):
        assert LdlFactorization(np.array([[1.0, 1.0], [1.0, 1.0]])).is_singular

    def test_inertia_matches_eigenvalues_on_random_symmetric_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = rng.standard_normal((6, 6))
            a = m + m.T
            eig = np.linalg.eigvalsh(a)
            f = LdlFactorization(a)
            assert f.inertia.positive == int((eig > 0).sum())
            assert f.inertia.negative == int((eig < 0).sum())

    def test_min_norm_lstsq_on_consistent_singular_system(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0]])
        x, rank = min_norm_lstsq(a, np.array([2.0, 2.0]))
        assert rank == 1
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-14)

    def test_condition_of_singular_matrix_is_infinite(self):
        assert condition_inf(np.zeros((2, 2))) == np.inf
        assert condition_inf(np.eye(3)) == pytest.approx(1.0)


def _brute_force_qp(g, c, ae, be, ai, bi):
    """Enumerate working sets; the strictly convex QP has one KKT point."""
    n, me, mi = g.shape[0], ae.shape[0], ai.shape[0]
    for size in range(min(mi, n - me) + 1):
        for rows in itertools.combinations(range(mi), size):
            a = np.vstack([ae, ai[list(rows)]])
            b = np.concatenate([be, bi[list(rows)]])
            k = np.block([[g, a.T], [a, np.zeros((a.shape[0], a.shape[0]))]])
            try:
                sol = np.linalg.solve(k, np.concatenate([-c, b]))
            except np.linalg.LinAlgError:
                continue
            d, mult = sol[:n], sol[n:]
            lam = np.zeros(mi)
            lam[list(rows)] = mult[me:]
            if np.all(ai @ d <= bi + 1e-9) and np.all(lam >= -1e-9):
                return d, lam, mult[:me]
    raise AssertionError("no KKT point found")


class TestElasticQp:
    def test_matches_brute_force_on_random_convex_qps(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            n, me, mi = 4, int(rng.integers(0, 2)), int(rng.integers(1, 6))
            m = rng.standard_normal((n, n))
            g = m @ m.T + 0.5 * np.eye(n)
            c = rng.standard_normal(n)
            ae, ai = rng.standard_normal((me, n)), rng.standard_normal((mi, n))
            x_feas = rng.standard_normal(n)
            be = ae @ x_feas
            bi = ai @ x_feas + rng.uniform(0.0, 1.0, mi)
            res = ElasticQp(g, ae, ai).solve(c, be, bi)
            assert res.status is QpStatus.OPTIMAL
            d, lam, nu = _brute_force_qp(g, c, ae, be, ai, bi)
            np.testing.assert_allclose(res.d, d, atol=1e-9)
            np.testing.assert_allclose(res.lam, lam, atol=1e-9)
            np.testing.assert_allclose(res.nu, nu, atol=1e-9)

    def test_infeasible_inequalities_end_elastic(self):
        qp = ElasticQp(np.eye(1), np.zeros((0, 1)), np.array([[1.0], [-1.0]]))
        res = qp.solve(np.zeros(1), np.zeros(0), np.array([-1.0, -1.0]))
        assert res.status is QpStatus.ELASTIC
        assert res.elastic > 0

    def test_warm_start_reproduces_solution(self):
        g = np.diag([1.0, 2.0])
        ai = np.array([[1.0, 1.0], [-1.0, 0.0]])
        qp = ElasticQp(g, np.zeros((0, 2)), ai)
        cold = qp.solve(np.array([-2.0, -2.0]), np.zeros(0), np.array([1.0, 0.0]))
        warm = qp.solve(np.array([-2.0, -2.0]), np.zeros(0), np.array([1.0, 0.0]), working_set=cold.working_set)
        np.testing.assert_allclose(warm.d, cold.d, atol=1e-14)
        assert warm.pivots <= cold.pivots

    def test_singular_kkt_matrix_rejected(self):
        with pytest.raises(NonConvexSubproblem):
            ElasticQp(np.zeros((2, 2)), np.array([[1.0, 1.0]]), np.zeros((0, 2)))
