"""Dense primal active-set QP solver with an elastic inequality variable.

Solves::

    minimize_d   0.5 d^T G d + c^T d
    subject to   A_e d  = b_e
                 A_i d <= b_i

by introducing a scalar ``t >= 0`` that relaxes every inequality
(``A_i d - t <= b_i``) and is penalized by ``M t + 0.5 t^2``.  The relaxed
problem is always feasible once the equalities are consistent; ``M`` is
increased until ``t`` vanishes or a cap is reached.

The equality-constrained base matrix ``K0 = [[G', E^T], [E, 0]]`` is factorized
once.  Working-set changes are handled through the Schur complement
``S = U K0^{-1} U^T`` of the working rows ``U``, so a new right-hand side
(for example a second-order correction) costs only triangular solves.

``G`` need not be positive definite.  It must be positive definite on the
null space of the equalities plus the current working rows, which is checked
through the inertia of the Schur complement at every working-set change.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linalg import LdlFactorization

__all__ = ["ElasticQp", "QpResult", "QpStatus", "NonConvexSubproblem"]


class NonConvexSubproblem(np.linalg.LinAlgError):
    """The base KKT matrix is singular or ``G`` is indefinite on a working-set null space."""

    def __init__(self, message: str, inertia=None):
        super().__init__(message)
        self.inertia = inertia


class QpStatus(Enum):
    OPTIMAL = "optimal"
    ELASTIC = "elastic"  # inequalities could only be satisfied with t > 0
    MAX_PIVOTS = "max_pivots"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class QpResult:
    d: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    elastic: float
    working_set: tuple[int, ...]
    pivots: int
    status: QpStatus

    @property
    def ok(self) -> bool:
        return self.status in (QpStatus.OPTIMAL, QpStatus.ELASTIC)


def _scatter(size, rows, values):
    out = np.zeros(size)
    out[rows] = values
    return out


class _WorkingSet:
    """Working rows with a symmetric indefinite factor of their Schur complement.

    By Haynsworth's inertia formula the QP is strictly convex on the null
    space of the equalities and working rows exactly when ``S`` has as many
    negative eigenvalues as ``K0`` has beyond the equality count.
    """

    def __init__(self, qp: "ElasticQp"):
        self.qp = qp
        self.rows: list[int] = []
        self.cols = np.zeros((qp.size, 0))  # K0^{-1} u_j
        self.schur = np.zeros((0, 0))
        self.factor: LdlFactorization | None = None
        self.negative = 0

    def __len__(self):
        return len(self.rows)

    @property
    def convex(self) -> bool:
        return self.negative == self.qp.extra_negative

    def _refactor(self) -> None:
        if self.rows:
            self.factor = LdlFactorization(self.schur, zero_tol=0.0)
            self.negative = self.factor.inertia.negative
        else:
            self.factor, self.negative = None, 0

    def try_add(self, j: int, rel_tol: float = 1e-7) -> bool:
        y = self.qp.schur_column(j)
        cross = self.qp.apply_rows(self.rows, y)
        diag = float(self.qp.apply_rows([j], y)[0])
        reduction = float(cross @ self.factor.solve(cross)) if self.rows else 0.0
        pivot = diag - reduction
        if not abs(pivot) > rel_tol * max(abs(diag), abs(reduction), 1e-300):
            return False
        k = len(self.rows)
        schur = np.zeros((k + 1, k + 1))
        schur[:k, :k] = self.schur
        schur[:k, k] = schur[k, :k] = cross
        schur[k, k] = diag
        self.rows.append(j)
        self.cols = np.column_stack([self.cols, y])
        self.schur = schur
        self._refactor()
        return True

    def remove(self, pos: int) -> None:
        keep = [i for i in range(len(self.rows)) if i != pos]
        self.rows.pop(pos)
        self.cols = self.cols[:, keep]
        self.schur = self.schur[np.ix_(keep, keep)]
        self._refactor()

    def multipliers(self, rhs: np.ndarray) -> np.ndarray:
        if not self.rows:
            return np.zeros(0)
        return self.factor.solve(rhs)


class ElasticQp:
    """Reusable QP with fixed ``G``, ``A_e``, ``A_i``; right-hand sides vary per solve."""

    def __init__(
        self,
        hessian: np.ndarray,
        eq_jac: np.ndarray,
        ineq_jac: np.ndarray,
        elastic_curvature: float = 1.0,
        zero_tol: float = 1e-13,
        dual_regularization: float = 0.0,
    ):
        g = np.asarray(hessian, dtype=float)
        ae = np.asarray(eq_jac, dtype=float).reshape(-1, g.shape[0])
        ai = np.asarray(ineq_jac, dtype=float).reshape(-1, g.shape[0])
        self.n, self.me, self.mi = g.shape[0], ae.shape[0], ai.shape[0]
        self.ai = ai
        # Scale for the ratio test: l1 norm of each (A_i[j], -1) row and of the t row.
        self._row_scale = np.append(np.abs(ai).sum(axis=1) + 1.0, 1.0)
        n1 = self.n + 1
        self.size = n1 + self.me
        k0 = np.zeros((self.size, self.size))
        k0[: self.n, : self.n] = g
        k0[self.n, self.n] = elastic_curvature
        k0[n1:, : self.n] = ae
        k0[: self.n, n1:] = ae.T
        if dual_regularization > 0:
            # Equalities are then met in a penalized least-squares sense.
            k0[n1:, n1:] = -dual_regularization * np.eye(self.me)
        self.dual_regularization = dual_regularization
        self.k0 = k0
        self.factor = LdlFactorization(k0, zero_tol=zero_tol)
        inertia = self.factor.inertia
        if self.factor.info > 0 or inertia.zero > 0 or inertia.negative < self.me:
            raise NonConvexSubproblem(f"KKT matrix inertia {inertia} is singular", inertia)
        # Negative curvature of G on the null space of A_e; it must be removed
        # by the working rows (see _WorkingSet).
        self.extra_negative = inertia.negative - self.me
        self.inertia = inertia
        self._cols: dict[int, np.ndarray] = {}
        # Row j < mi is (A_i[j], -1); row mi is (0, -1), i.e. t >= 0.
        self.t_row = self.mi

    # -- row algebra -----------------------------------------------------------
    def row_vector(self, j: int) -> np.ndarray:
        u = np.zeros(self.size)
        if j < self.mi:
            u[: self.n] = self.ai[j]
        u[self.n] = -1.0
        return u

    def schur_column(self, j: int) -> np.ndarray:
        col = self._cols.get(j)
        if col is None:
            col = self.factor.solve(self.row_vector(j))
            self._cols[j] = col
        return col

    def prefetch(self, rows) -> None:
        rows = [j for j in rows if j not in self._cols]
        if rows:
            sol = self.factor.solve(np.column_stack([self.row_vector(j) for j in rows]))
            for k, j in enumerate(rows):
                self._cols[j] = sol[:, k]

    def apply_rows(self, rows, w: np.ndarray) -> np.ndarray:
        """``U_rows @ w`` using only the (d, t) part of ``w``."""
        rows = np.asarray(rows, dtype=int)
        d, t = w[: self.n], w[self.n]
        out = np.full(rows.size, -t, dtype=float)
        body = rows < self.mi
        if body.any():
            out[body] += self.ai[rows[body]] @ d
        return out

    def all_rows(self, y: np.ndarray) -> np.ndarray:
        return np.append(self.ai @ y[: self.n] - y[self.n], -y[self.n])

    # -- solve -----------------------------------------------------------------
    def solve(
        self,
        c: np.ndarray,
        be: np.ndarray,
        bi: np.ndarray,
        working_set=(),
        max_pivots: int = 5000,
        penalty: float = 1e4,
        penalty_cap: float = 1e12,
        feas_tol: float = 1e-10,
    ) -> QpResult:
        c = np.asarray(c, dtype=float)
        be = np.asarray(be, dtype=float)
        bi = np.asarray(bi, dtype=float)
        total = 0
        warm = tuple(int(j) for j in working_set if 0 <= int(j) < self.mi)
        while True:
            res = self._solve_fixed_penalty(c, be, bi, warm, max_pivots - total, penalty, feas_tol)
            total += res.pivots
            if res.status != QpStatus.ELASTIC or penalty >= penalty_cap or total >= max_pivots:
                return QpResult(res.d, res.lam, res.nu, res.elastic, res.working_set, total, res.status)
            penalty *= 100.0
            warm = res.working_set

    def _solve_fixed_penalty(self, c, be, bi, warm, max_pivots, penalty, feas_tol) -> QpResult:
        n, mi = self.n, self.mi
        r = np.append(bi, 0.0)
        w0 = self.factor.solve(np.concatenate([-c, [-penalty], be]))
        scale = 1.0 + float(np.abs(r).max(initial=0.0))

        ws = _WorkingSet(self)
        self.prefetch((self.t_row,) + warm)
        ws.try_add(self.t_row)
        for j in warm:
            ws.try_add(j)
        self._require_convex(ws)
        w = self._eqp(ws, w0, r)
        y = w[: n + 1].copy()
        viol = float((self.ai @ y[:n] - bi).max(initial=-np.inf))
        if viol > feas_tol * scale:
            # Start from the elastic point that makes every inequality feasible.
            y[n] = viol
            rows = self.all_rows(y)
            ws = _WorkingSet(self)
            for j in np.flatnonzero(rows[:mi] - r[:mi] >= -feas_tol * scale):
                ws.try_add(int(j))
            self._require_convex(ws)

        pivots = 0
        status = QpStatus.MAX_PIVOTS
        # Blocking rows that are numerically dependent on the working set (and
        # the equalities).  They are met to rounding accuracy by the remaining
        # working rows, so they are left out of later ratio tests.
        skipped: set[int] = set()
        lam_w = np.zeros(len(ws))
        w = None
        for pivots in range(max_pivots + 1):
            w, lam_w = self._eqp_with_mult(ws, w0, r)
            p = w[: n + 1] - y
            if self.dual_regularization == 0.0 and len(ws) >= n + 1 - self.me:
                p[:] = 0.0  # vertex: any nonzero step is rounding noise
            if np.abs(p).max() <= 1e-13 * (1.0 + np.abs(y).max()):
                # The t row carries a penalty-sized multiplier; keep it out of the scale.
                body = np.asarray(ws.rows) < mi
                lam_scale = 1.0 + float(np.abs(lam_w[body]).max(initial=0.0))
                if len(ws) == 0 or lam_w.min() >= -1e-12 * lam_scale:
                    status = QpStatus.OPTIMAL
                    break
                if pivots == max_pivots:
                    break
                ws.remove(int(np.argmin(lam_w)))
                self._require_convex(ws)
                continue
            if pivots == max_pivots:
                break
            cp = self.all_rows(p)
            slack = np.maximum(r - self.all_rows(y), 0.0)
            mask = cp > 1e-11 * self._row_scale * np.abs(p).max()
            mask[ws.rows] = False
            if skipped:
                mask[list(skipped)] = False
            alpha, block = 1.0, -1
            if mask.any():
                idx = np.flatnonzero(mask)
                ratios = slack[idx] / cp[idx]
                k = int(np.argmin(ratios))
                if ratios[k] < 1.0:
                    alpha, block = float(ratios[k]), int(idx[k])
            y = y + alpha * p
            if block >= 0 and not ws.try_add(block):
                # Swap out the row with the most negative multiplier, if any.
                if len(ws) and lam_w.min() < 0.0:
                    ws.remove(int(np.argmin(lam_w)))
                    if ws.try_add(block):
                        self._require_convex(ws)
                        continue
                    self._require_convex(ws)
                skipped.add(block)

        if status == QpStatus.OPTIMAL:
            rhs0 = np.concatenate([-c, [-penalty], be])
            w, lam_w = self._refine(ws, w, lam_w, rhs0, r)
        y_final = w[: n + 1] if status == QpStatus.OPTIMAL else y
        lam = np.zeros(mi + 1)
        lam[ws.rows] = lam_w
        nu = w[n + 1 :] if w is not None else np.zeros(self.me)
        t = float(y_final[n])
        if status == QpStatus.OPTIMAL and skipped:
            excess = self.all_rows(y_final)[list(skipped)] - r[list(skipped)]
            if excess.max() > 1e-8 * scale:
                status = QpStatus.DEGENERATE
        if status == QpStatus.OPTIMAL and t > feas_tol * scale:
            status = QpStatus.ELASTIC
        return QpResult(
            d=y_final[:n].copy(),
            lam=np.maximum(lam[:mi], 0.0),
            nu=nu.copy(),
            elastic=max(t, 0.0),
            working_set=tuple(sorted(j for j in ws.rows if j < mi)),
            pivots=pivots,
            status=status,
        )

    def _require_convex(self, ws: _WorkingSet) -> None:
        if not ws.convex:
            raise NonConvexSubproblem(
                f"reduced Hessian indefinite on a working set of {len(ws)} rows", self.inertia
            )

    def _eqp_with_mult(self, ws: _WorkingSet, w0: np.ndarray, r: np.ndarray):
        if not ws.rows:
            return w0, np.zeros(0)
        lam = ws.multipliers(self.apply_rows(ws.rows, w0) - r[ws.rows])
        return w0 - ws.cols @ lam, lam

    def _refine(self, ws: _WorkingSet, w, lam, rhs0, r, steps: int = 2):
        """Iterative refinement of the working-set KKT solution.

        The Schur-complement solve loses accuracy when ``K0`` is ill
        conditioned; a couple of residual corrections restore it.
        """
        rows = ws.rows
        for _ in range(steps):
            res_top = rhs0 - self.k0 @ w
            if rows:
                res_top -= np.column_stack([self.row_vector(j) for j in rows]) @ lam
            res_w = r[rows] - self.apply_rows(rows, w) if rows else np.zeros(0)
            dw, dlam = self._eqp_with_mult(ws, self.factor.solve(res_top), np.zeros_like(r) if not rows else _scatter(r.size, rows, res_w))
            w = w + dw
            lam = lam + dlam
        return w, lam

    def _eqp(self, ws, w0, r):
        return self._eqp_with_mult(ws, w0, r)[0]
