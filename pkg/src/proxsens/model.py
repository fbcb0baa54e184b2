"""Parametric NLP description and KKT-level evaluation.

Problems have the form::

    minimize_x  f(x, theta)
    subject to  g(x, theta) <= 0,   h(x, theta) = 0

with Lagrangian ``f + lam^T g + nu^T h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import ad
from .errors import DimensionMismatch, EvaluatorFailure, RankDeficientBasis

__all__ = [
    "Derivatives",
    "ParametricNlp",
    "PrimalDualPoint",
    "ActiveSetPartition",
    "KktEvaluation",
    "RegularityReport",
    "evaluate_kkt",
    "kkt_residual_norms",
    "detect_active_set",
    "check_regularity",
    "DEFAULT_ACTIVITY_TOL",
]

DEFAULT_ACTIVITY_TOL = 1e-6

Array = np.ndarray


def _frozen(a, shape=None) -> Array:
    a = np.array(a, dtype=float)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Derivatives:
    """First-order data at ``(x, theta)`` plus a lazy Lagrangian curvature map.

    ``curvature(lam, nu)`` returns ``(hess_xx, cross)`` where ``hess_xx`` is
    the x-Hessian of the Lagrangian (n_x, n_x) and ``cross`` is its mixed
    theta-x derivative (n_x, n_theta).
    """

    grad_f: Array
    jac_g: Array
    jac_h: Array
    theta_jac_g: Array
    theta_jac_h: Array
    curvature: Callable[[Array, Array], tuple[Array, Array]]


def _autodiff_derivatives(objective, inequality, equality, n_x):
    def derivatives(x, theta):
        _, gf, hf = ad.second_order(objective, x, theta, scalar=True)
        if inequality is not None:
            _, jg, hg = ad.second_order(inequality, x, theta)
        else:
            jg, hg = np.zeros((0, gf.size)), np.zeros((0, gf.size, gf.size))
        if equality is not None:
            _, jh, hh = ad.second_order(equality, x, theta)
        else:
            jh, hh = np.zeros((0, gf.size)), np.zeros((0, gf.size, gf.size))

        def curvature(lam, nu):
            full = hf + np.tensordot(lam, hg, axes=1) + np.tensordot(nu, hh, axes=1)
            return full[:n_x, :n_x], full[:n_x, n_x:]

        return Derivatives(
            grad_f=gf[:n_x],
            jac_g=jg[:, :n_x],
            jac_h=jh[:, :n_x],
            theta_jac_g=jg[:, n_x:],
            theta_jac_h=jh[:, n_x:],
            curvature=curvature,
        )

    return derivatives


def _empty_constraint(x, theta):
    return np.zeros(0)


@dataclass(frozen=True)
class ParametricNlp:
    """Immutable parametric NLP.

    ``objective``, ``inequality`` and ``equality`` map ``(x, theta)`` to a
    float / vector; ``derivatives`` maps ``(x, theta)`` to :class:`Derivatives`.
    Use :meth:`from_functions` to obtain derivatives by forward-mode AD, or pass
    a hand-written ``derivatives`` callable directly.
    """

    n_x: int
    n_in: int
    n_eq: int
    n_theta: int
    objective: Callable
    inequality: Callable
    equality: Callable
    derivatives: Callable[[Array, Array], Derivatives]
    name: str = "nlp"
    initializer: Optional[Callable[[Array], Array]] = None
    probe: Optional[tuple] = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for attr in ("n_x", "n_in", "n_eq", "n_theta"):
            if int(getattr(self, attr)) < 0:
                raise DimensionMismatch(f"{attr} must be nonnegative")
        if self.probe is not False:
            self._validate_by_probe()

    @classmethod
    def from_functions(
        cls,
        objective: Callable,
        inequality: Callable | None = None,
        equality: Callable | None = None,
        *,
        n_x: int,
        n_theta: int,
        name: str = "nlp",
        initializer: Callable | None = None,
        probe: tuple | None = None,
        metadata: dict | None = None,
    ) -> "ParametricNlp":
        """Build a problem whose derivatives come from :mod:`proxsens.ad`.

        Evaluators must be written with numpy-style operations so they accept
        both float arrays and :class:`~proxsens.ad.Jet` arguments.
        """
        x0 = np.zeros(n_x) if probe is None else np.asarray(probe[0], float)
        t0 = np.zeros(n_theta) if probe is None else np.asarray(probe[1], float)
        n_in = 0 if inequality is None else np.atleast_1d(_values(inequality, x0, t0)).size
        n_eq = 0 if equality is None else np.atleast_1d(_values(equality, x0, t0)).size
        return cls(
            n_x=n_x,
            n_in=n_in,
            n_eq=n_eq,
            n_theta=n_theta,
            objective=objective,
            inequality=inequality or _empty_constraint,
            equality=equality or _empty_constraint,
            derivatives=_autodiff_derivatives(objective, inequality, equality, n_x),
            name=name,
            initializer=initializer,
            probe=probe,
            metadata=dict(metadata or {}),
        )

    # -- evaluation ----------------------------------------------------------
    def check_dims(self, x=None, theta=None, lam=None, nu=None) -> None:
        for vec, size, label in ((x, self.n_x, "x"), (theta, self.n_theta, "theta"),
                                 (lam, self.n_in, "lambda"), (nu, self.n_eq, "nu")):
            if vec is not None and np.shape(vec) != (size,):
                raise DimensionMismatch(f"{label} has shape {np.shape(vec)}, expected ({size},)")

    def values(self, x: Array, theta: Array) -> tuple[float, Array, Array]:
        f = float(self.objective(x, theta))
        g = np.asarray(self.inequality(x, theta), dtype=float).reshape(-1)
        h = np.asarray(self.equality(x, theta), dtype=float).reshape(-1)
        if not (np.isfinite(f) and np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise EvaluatorFailure(f"{self.name}: non-finite function value")
        return f, g, h

    def derivatives_at(self, x: Array, theta: Array) -> Derivatives:
        d = self.derivatives(np.asarray(x, float), np.asarray(theta, float))
        for name in ("grad_f", "jac_g", "jac_h", "theta_jac_g", "theta_jac_h"):
            if not np.all(np.isfinite(getattr(d, name))):
                raise EvaluatorFailure(f"{self.name}: non-finite {name}")
        return d

    def initial_primal(self, theta: Array) -> Array:
        if self.initializer is None:
            return np.zeros(self.n_x)
        x = np.asarray(self.initializer(np.asarray(theta, float)), dtype=float)
        self.check_dims(x=x)
        return x

    def _validate_by_probe(self) -> None:
        if self.probe is None:
            x = np.zeros(self.n_x)
            theta = np.zeros(self.n_theta)
        else:
            x = np.asarray(self.probe[0], dtype=float)
            theta = np.asarray(self.probe[1], dtype=float)
        self.check_dims(x=x, theta=theta)
        _, g, h = self.values(x, theta)
        if g.shape != (self.n_in,) or h.shape != (self.n_eq,):
            raise DimensionMismatch(
                f"{self.name}: constraint sizes {g.shape}, {h.shape} do not match ({self.n_in},), ({self.n_eq},)"
            )
        d = self.derivatives_at(x, theta)
        expected = {
            "grad_f": (self.n_x,),
            "jac_g": (self.n_in, self.n_x),
            "jac_h": (self.n_eq, self.n_x),
            "theta_jac_g": (self.n_in, self.n_theta),
            "theta_jac_h": (self.n_eq, self.n_theta),
        }
        for name, shape in expected.items():
            if np.shape(getattr(d, name)) != shape:
                raise DimensionMismatch(f"{self.name}: {name} has shape {np.shape(getattr(d, name))}, expected {shape}")
        rng = np.random.default_rng(0)
        hess, cross = d.curvature(rng.standard_normal(self.n_in), rng.standard_normal(self.n_eq))
        if hess.shape != (self.n_x, self.n_x) or cross.shape != (self.n_x, self.n_theta):
            raise DimensionMismatch(f"{self.name}: curvature blocks have shapes {hess.shape}, {cross.shape}")
        asym = np.abs(hess - hess.T).max() if hess.size else 0.0
        if asym > 1e-10 * max(1.0, np.abs(hess).max()):
            raise EvaluatorFailure(f"{self.name}: Lagrangian Hessian is not symmetric (|H - H^T| = {asym:.2e})")


def _values(fun, x, theta):
    return np.asarray(fun(x, theta), dtype=float)


# -- primal-dual points --------------------------------------------------------


def _residual_blocks(grad_f, jac_g, jac_h, g, h, lam, nu):
    stationarity = grad_f + jac_g.T @ lam + jac_h.T @ nu
    return stationarity, g, h, lam * g


def _residual_norms(grad_f, jac_g, jac_h, g, h, lam, nu) -> tuple[float, float, float]:
    stationarity, g, h, comp = _residual_blocks(grad_f, jac_g, jac_h, g, h, lam, nu)
    stat = float(np.abs(stationarity).max(initial=0.0))
    g_violation = float(np.maximum(g, 0.0).max(initial=0.0))
    feas = max(float(np.abs(h).max(initial=0.0)), g_violation)
    compl = max(
        float(np.abs(comp).max(initial=0.0)),
        float(np.maximum(-lam, 0.0).max(initial=0.0)),
        g_violation,
    )
    return stat, feas, compl


@dataclass(frozen=True)
class PrimalDualPoint:
    """A primal-dual point ``(x, lam, nu)`` of the problem at ``theta``."""

    theta: Array
    x: Array
    lam: Array
    nu: Array
    kkt_residual_inf: float
    tol_mult: float = 1e-8

    def __post_init__(self):
        for name in ("theta", "x", "lam", "nu"):
            object.__setattr__(self, name, _frozen(np.atleast_1d(getattr(self, name)).ravel()))
        if self.lam.size and self.lam.min() < -self.tol_mult:
            raise ValueError(f"inequality multipliers must be >= -{self.tol_mult}, got min {self.lam.min():.3e}")

    @classmethod
    def at(cls, nlp: ParametricNlp, theta, x, lam=None, nu=None, tol_mult: float = 1e-8) -> "PrimalDualPoint":
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        x = np.asarray(x, dtype=float)
        lam = np.zeros(nlp.n_in) if lam is None else np.asarray(lam, dtype=float)
        nu = np.zeros(nlp.n_eq) if nu is None else np.asarray(nu, dtype=float)
        nlp.check_dims(x, theta, lam, nu)
        res = max(_point_norms(nlp, theta, x, lam, nu))
        return cls(theta=theta, x=x, lam=lam, nu=nu, kkt_residual_inf=res, tol_mult=tol_mult)

    def with_theta(self, nlp: ParametricNlp, theta) -> "PrimalDualPoint":
        return PrimalDualPoint.at(nlp, theta, self.x, self.lam, self.nu, self.tol_mult)


def _point_norms(nlp, theta, x, lam, nu):
    _, g, h = nlp.values(x, theta)
    d = nlp.derivatives_at(x, theta)
    return _residual_norms(d.grad_f, d.jac_g, d.jac_h, g, h, lam, nu)


def _check_point(nlp: ParametricNlp, pt: PrimalDualPoint) -> None:
    nlp.check_dims(pt.x, pt.theta, pt.lam, pt.nu)


@dataclass(frozen=True)
class ActiveSetPartition:
    active: tuple[int, ...]
    inactive: tuple[int, ...]
    tolerance: float

    @property
    def active_index(self) -> np.ndarray:
        return np.asarray(self.active, dtype=int)

    @property
    def inactive_index(self) -> np.ndarray:
        return np.asarray(self.inactive, dtype=int)


@dataclass(frozen=True)
class KktEvaluation:
    lagrangian_hessian: Array
    grad_f: Array
    grad_g: Array
    grad_h: Array
    theta_cross: Array
    theta_grad_g: Array
    theta_grad_h: Array
    g: Array
    h: Array
    stationarity: Array
    complementarity: Array

    @property
    def feasibility(self) -> Array:
        return np.concatenate([np.maximum(self.g, 0.0), self.h])


def evaluate_kkt(nlp: ParametricNlp, pt: PrimalDualPoint) -> KktEvaluation:
    """All matrices entering the derivative systems, evaluated at ``pt``."""
    _check_point(nlp, pt)
    _, g, h = nlp.values(pt.x, pt.theta)
    d = nlp.derivatives_at(pt.x, pt.theta)
    hess, cross = d.curvature(pt.lam, pt.nu)
    if not (np.all(np.isfinite(hess)) and np.all(np.isfinite(cross))):
        raise EvaluatorFailure(f"{nlp.name}: non-finite Lagrangian curvature")
    stationarity, _, _, comp = _residual_blocks(d.grad_f, d.jac_g, d.jac_h, g, h, pt.lam, pt.nu)
    return KktEvaluation(
        lagrangian_hessian=0.5 * (hess + hess.T),
        grad_f=d.grad_f,
        grad_g=d.jac_g,
        grad_h=d.jac_h,
        theta_cross=cross,
        theta_grad_g=d.theta_jac_g,
        theta_grad_h=d.theta_jac_h,
        g=g,
        h=h,
        stationarity=stationarity,
        complementarity=comp,
    )


def kkt_residual_norms(nlp: ParametricNlp, pt: PrimalDualPoint) -> tuple[float, float, float]:
    """Infinity norms of (stationarity, feasibility, complementarity)."""
    _check_point(nlp, pt)
    return _point_norms(nlp, pt.theta, pt.x, pt.lam, pt.nu)


def _partition(g: Array, tolerance: float) -> ActiveSetPartition:
    if tolerance <= 0:
        raise ValueError("activity tolerance must be positive")
    mask = np.abs(g) <= tolerance
    idx = np.arange(g.size)
    return ActiveSetPartition(tuple(int(i) for i in idx[mask]), tuple(int(i) for i in idx[~mask]), tolerance)


def detect_active_set(nlp: ParametricNlp, pt: PrimalDualPoint, tolerance: float = DEFAULT_ACTIVITY_TOL) -> ActiveSetPartition:
    """Partition inequality indices by ``|g_i(x)| <= tolerance``."""
    _check_point(nlp, pt)
    _, g, _ = nlp.values(pt.x, pt.theta)
    return _partition(g, tolerance)


@dataclass(frozen=True)
class RegularityReport:
    licq: bool
    min_singular_value: float
    scs: bool
    min_active_multiplier: float
    ssosc: bool
    min_reduced_eigenvalue: float
    partition: ActiveSetPartition

    @property
    def all_hold(self) -> bool:
        return self.licq and self.scs and self.ssosc


def check_regularity(nlp: ParametricNlp, pt: PrimalDualPoint, tolerance: float = DEFAULT_ACTIVITY_TOL) -> RegularityReport:
    """Numerical LICQ / SCS / SSOSC test at a KKT point."""
    if pt.kkt_residual_inf > tolerance:
        raise ValueError(f"point is not a KKT point to {tolerance:g} (residual {pt.kkt_residual_inf:.2e})")
    kkt = evaluate_kkt(nlp, pt)
    part = _partition(kkt.g, tolerance)
    act = part.active_index

    jac = np.vstack([kkt.grad_g[act], kkt.grad_h])
    if jac.shape[0] == 0:
        smin = np.inf
    else:
        sv = np.linalg.svd(jac, compute_uv=False)
        smin = float(sv[-1]) if jac.shape[0] <= jac.shape[1] else 0.0
    licq = smin > tolerance

    lam_act = pt.lam[act]
    min_mult = float(lam_act.min()) if lam_act.size else np.inf
    scs = min_mult > tolerance

    strong = act[pt.lam[act] > tolerance]
    jac_strong = np.vstack([kkt.grad_g[strong], kkt.grad_h])
    try:
        basis = np.eye(nlp.n_x) if jac_strong.shape[0] == 0 else scipy.linalg.null_space(jac_strong)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RankDeficientBasis(str(exc)) from exc
    if basis.shape[1] == 0:
        min_eig = np.inf
    else:
        reduced = basis.T @ kkt.lagrangian_hessian @ basis
        min_eig = float(np.linalg.eigvalsh(0.5 * (reduced + reduced.T))[0])
    ssosc = min_eig > tolerance
    return RegularityReport(licq, smin, scs, min_mult, ssosc, min_eig, part)
