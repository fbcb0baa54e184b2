"""Dense symmetric indefinite factorization and least-squares helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

__all__ = ["LdlFactorization", "Inertia", "min_norm_lstsq", "condition_inf"]


@dataclass(frozen=True)
class Inertia:
    positive: int
    negative: int
    zero: int


class LdlFactorization:
    """``P A P^T = L D L^T`` with Bunch-Kaufman pivoting (LAPACK ``dsytrf``).

    ``D`` is block diagonal with 1x1 and 2x2 blocks; its eigenvalues give the
    inertia of ``A`` by Sylvester's law.  Pivots with magnitude at most
    ``zero_tol * max(1, ||A||_inf)`` are counted as zero.
    """

    def __init__(self, a: np.ndarray, zero_tol: float = 1e-13):
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        self.n = a.shape[0]
        self.norm_inf = float(np.abs(a).sum(axis=1).max()) if self.n else 0.0
        self.norm_1 = self.norm_inf  # symmetric
        if self.n == 0:
            self._lu = a
            self._ipiv = np.zeros(0, dtype=np.int32)
            self.pivot_eigenvalues = np.zeros(0)
            self.info = 0
        else:
            lwork = int(lapack.dsytrf_lwork(self.n, lower=1)[0])
            lu, ipiv, info = lapack.dsytrf(a, lower=1, lwork=max(lwork, 1))
            if info < 0:
                raise ValueError(f"dsytrf: illegal argument {-info}")
            self._lu, self._ipiv, self.info = lu, ipiv, info
            self.pivot_eigenvalues = self._block_eigenvalues()
        self.zero_threshold = zero_tol * max(1.0, self.norm_inf)

    def _block_eigenvalues(self) -> np.ndarray:
        lu, ipiv, n = self._lu, self._ipiv, self.n
        eig = np.empty(n)
        k = 0
        while k < n:
            if ipiv[k] > 0:
                eig[k] = lu[k, k]
                k += 1
            else:
                a, b, c = lu[k, k], lu[k + 1, k], lu[k + 1, k + 1]
                mean, half = 0.5 * (a + c), np.hypot(0.5 * (a - c), b)
                eig[k], eig[k + 1] = mean - half, mean + half
                k += 2
        return eig

    @property
    def inertia(self) -> Inertia:
        e = self.pivot_eigenvalues
        zero = np.abs(e) <= self.zero_threshold
        return Inertia(int(np.sum((e > 0) & ~zero)), int(np.sum((e < 0) & ~zero)), int(zero.sum()))

    @property
    def min_abs_pivot(self) -> float:
        if self.n == 0:
            return np.inf
        return float(np.abs(self.pivot_eigenvalues).min())

    @property
    def is_singular(self) -> bool:
        return self.info > 0 or self.inertia.zero > 0

    def rcond(self) -> float:
        """Reciprocal 1-norm condition estimate (LAPACK ``dsycon``)."""
        if self.n == 0:
            return 1.0
        if self.info > 0:
            return 0.0
        rc, info = lapack.dsycon(self._lu, self._ipiv, self.norm_1, lower=1)
        return float(rc)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return b.copy()
        if self.info > 0:
            raise np.linalg.LinAlgError("matrix is exactly singular")
        x, info = lapack.dsytrs(self._lu, self._ipiv, b, lower=1)
        if info != 0:
            raise np.linalg.LinAlgError(f"dsytrs failed with info={info}")
        return x


def min_norm_lstsq(a: np.ndarray, b: np.ndarray, rank_tol: float = 1e-10):
    """Minimum-norm least-squares solution via complete orthogonal decomposition.

    Uses LAPACK ``gelsy`` (QR with column pivoting followed by an RZ
    factorization).  Returns ``(x, rank)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return np.zeros((a.shape[1],) + b.shape[1:]), 0
    x, _, rank, _ = scipy.linalg.lstsq(a, b, cond=rank_tol, lapack_driver="gelsy")
    return x, int(rank)


def condition_inf(a: np.ndarray) -> float:
    """``||A||_inf ||A^{-1}||_inf`` (infinite when singular)."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 1.0
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError:
        return np.inf
    if not np.all(np.isfinite(inv)):
        return np.inf
    return float(np.linalg.norm(a, np.inf) * np.linalg.norm(inv, np.inf))
