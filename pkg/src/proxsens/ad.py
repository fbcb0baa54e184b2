"""Second-order forward-mode automatic differentiation.

A :class:`Jet` carries a value together with its gradient and Hessian with
respect to ``m`` seed variables.  Jets may be batched: ``val`` has an
arbitrary shape ``S``, ``grad`` has shape ``S + (m,)`` and ``hess`` has shape
``S + (m, m)``.  Arithmetic follows numpy broadcasting on the leading ``S``
axes, and numpy ufuncs (``np.sin``, ``np.exp``, ...) dispatch to the jet
implementation, so evaluator code written against numpy arrays can be
differentiated without modification.

A zero Hessian is stored as ``None``; linear expressions therefore never
allocate ``m x m`` blocks.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = ["Jet", "seed", "stack", "concatenate", "second_order"]


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., :, None] * b[..., None, :]


class Jet:
    """Truncated second-order Taylor expansion over ``m`` seed directions."""

    __slots__ = ("val", "grad", "hess")
    __array_priority__ = 1000

    def __init__(self, val, grad, hess=None):
        self.val = np.asarray(val, dtype=float)
        self.grad = np.asarray(grad, dtype=float)
        self.hess = None if hess is None else np.asarray(hess, dtype=float)

    # -- construction helpers -------------------------------------------------
    @property
    def m(self) -> int:
        return self.grad.shape[-1]

    @property
    def shape(self) -> tuple:
        return self.val.shape

    @property
    def ndim(self) -> int:
        return self.val.ndim

    def __len__(self) -> int:
        return len(self.val)

    def __repr__(self) -> str:
        return f"Jet(val={self.val!r}, m={self.m})"

    def hessian(self) -> np.ndarray:
        if self.hess is None:
            return np.zeros(self.val.shape + (self.m, self.m))
        return np.broadcast_to(self.hess, self.val.shape + (self.m, self.m))

    @classmethod
    def constant(cls, value, m: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        return cls(value, np.zeros(value.shape + (m,)))

    # -- structural ops ------------------------------------------------------
    def __getitem__(self, idx) -> "Jet":
        if not isinstance(idx, tuple):
            idx = (idx,)
        gidx = idx + (slice(None),)
        hidx = idx + (slice(None), slice(None))
        hess = None if self.hess is None else self.hessian()[hidx]
        return Jet(self.val[idx], self.grad[gidx], hess)

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    def reshape(self, *shape) -> "Jet":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        val = self.val.reshape(shape)
        hess = None if self.hess is None else self.hessian().reshape(val.shape + (self.m, self.m))
        return Jet(val, self.grad.reshape(val.shape + (self.m,)), hess)

    @property
    def T(self) -> "Jet":
        if self.ndim < 2:
            return self
        axes = tuple(range(self.ndim))[::-1]
        hess = None
        if self.hess is not None:
            hess = self.hessian().transpose(axes + (self.ndim, self.ndim + 1))
        return Jet(self.val.transpose(axes), self.grad.transpose(axes + (self.ndim,)), hess)

    def sum(self, axis=None, **_) -> "Jet":
        if axis is None:
            axes = tuple(range(self.ndim))
        else:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            axes = tuple(a % self.ndim for a in axes)
        hess = None if self.hess is None else self.hessian().sum(axis=axes)
        return Jet(self.val.sum(axis=axes), self.grad.sum(axis=axes), hess)

    # -- arithmetic ----------------------------------------------------------
    def __neg__(self) -> "Jet":
        return Jet(-self.val, -self.grad, None if self.hess is None else -self.hess)

    def __pos__(self) -> "Jet":
        return self

    def __add__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            val = self.val + other
            grad = np.broadcast_to(self.grad, val.shape + (self.m,))
            hess = self.hess
            if hess is not None:
                hess = np.broadcast_to(self.hessian(), val.shape + (self.m, self.m))
            return Jet(val, grad, hess)
        if self.hess is None:
            hess = other.hess
        elif other.hess is None:
            hess = self.hess
        else:
            hess = self.hess + other.hess
        return Jet(self.val + other.val, self.grad + other.grad, hess)

    __radd__ = __add__

    def __sub__(self, other) -> "Jet":
        return self + (-other)

    def __rsub__(self, other) -> "Jet":
        return (-self) + other

    def __mul__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            c = np.asarray(other, dtype=float)
            val = self.val * c
            grad = c[..., None] * self.grad
            hess = None if self.hess is None else c[..., None, None] * self.hess
            return Jet(val, grad, hess)
        a, b = self, other
        val = a.val * b.val
        grad = a.val[..., None] * b.grad + b.val[..., None] * a.grad
        cross = _outer(a.grad, b.grad)
        hess = cross + np.swapaxes(cross, -1, -2)
        if a.hess is not None:
            hess = hess + b.val[..., None, None] * a.hess
        if b.hess is not None:
            hess = hess + a.val[..., None, None] * b.hess
        return Jet(val, grad, hess)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * other._reciprocal()

    def __rtruediv__(self, other) -> "Jet":
        return self._reciprocal() * other

    def __pow__(self, p) -> "Jet":
        if isinstance(p, Jet):
            return np.exp(p * np.log(self))
        p = float(p)
        if p == 2.0:
            return self * self
        v = self.val
        return self._chain(v**p, p * v ** (p - 1), p * (p - 1) * v ** (p - 2))

    def __rpow__(self, base) -> "Jet":
        return np.exp(self * np.log(base))

    def __matmul__(self, other) -> "Jet":
        if isinstance(other, Jet):
            if self.ndim == 1 and other.ndim == 1:
                return (self * other).sum()
            raise NotImplementedError("jet @ jet is supported for vectors only")
        other = np.asarray(other, dtype=float)
        # (..., k) @ (k, j): contract the last value axis
        val = self.val @ other
        grad = np.einsum("...km,kj->...jm", self.grad[..., :, :], other.reshape(other.shape[0], -1)).reshape(
            val.shape + (self.m,)
        )
        hess = None
        if self.hess is not None:
            hess = np.einsum(
                "...kab,kj->...jab", self.hessian(), other.reshape(other.shape[0], -1)
            ).reshape(val.shape + (self.m, self.m))
        return Jet(val, grad, hess)

    def __rmatmul__(self, other) -> "Jet":
        other = np.asarray(other, dtype=float)
        if self.ndim != 1:
            raise NotImplementedError("matrix @ jet is supported for vector jets only")
        val = other @ self.val
        grad = other @ self.grad
        hess = None if self.hess is None else np.tensordot(other, self.hessian(), axes=(-1, 0))
        return Jet(val, grad, hess)

    def dot(self, other) -> "Jet":
        return self @ other

    # -- elementary functions --------------------------------------------------
    def _chain(self, f0, f1, f2) -> "Jet":
        f0 = np.asarray(f0, dtype=float)
        f1 = np.asarray(f1, dtype=float)
        f2 = np.asarray(f2, dtype=float)
        grad = f1[..., None] * self.grad
        hess = f2[..., None, None] * _outer(self.grad, self.grad)
        if self.hess is not None:
            hess = hess + f1[..., None, None] * self.hess
        return Jet(f0, grad, hess)

    def _reciprocal(self) -> "Jet":
        v = self.val
        return self._chain(1.0 / v, -1.0 / v**2, 2.0 / v**3)

    def sin(self):
        s, c = np.sin(self.val), np.cos(self.val)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = np.sin(self.val), np.cos(self.val)
        return self._chain(c, -s, -c)

    def exp(self):
        e = np.exp(self.val)
        return self._chain(e, e, e)

    def log(self):
        v = self.val
        return self._chain(np.log(v), 1.0 / v, -1.0 / v**2)

    def sqrt(self):
        r = np.sqrt(self.val)
        return self._chain(r, 0.5 / r, -0.25 / (r * self.val))

    def tanh(self):
        t = np.tanh(self.val)
        d = 1.0 - t**2
        return self._chain(t, d, -2.0 * t * d)

    def square(self):
        return self * self

    _UNARY = {
        "sin": "sin",
        "cos": "cos",
        "exp": "exp",
        "log": "log",
        "sqrt": "sqrt",
        "tanh": "tanh",
        "square": "square",
        "negative": "__neg__",
        "positive": "__pos__",
    }
    _BINARY = {
        "add": ("__add__", "__radd__"),
        "subtract": ("__sub__", "__rsub__"),
        "multiply": ("__mul__", "__rmul__"),
        "true_divide": ("__truediv__", "__rtruediv__"),
        "power": ("__pow__", "__rpow__"),
        "matmul": ("__matmul__", "__rmatmul__"),
    }

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs.get("out") is not None:
            return NotImplemented
        name = ufunc.__name__
        if name in self._UNARY and len(inputs) == 1:
            return getattr(inputs[0], self._UNARY[name])()
        if name in self._BINARY and len(inputs) == 2:
            left, right = inputs
            fwd, rev = self._BINARY[name]
            if isinstance(left, Jet):
                return getattr(left, fwd)(right)
            return getattr(right, rev)(left)
        return NotImplemented


def seed(values) -> Jet:
    """Independent variables: a vector jet whose gradient is the identity."""
    values = np.asarray(values, dtype=float).ravel()
    return Jet(values, np.eye(values.size))


def _as_jet(item, m: int) -> Jet:
    if isinstance(item, Jet):
        return item
    return Jet.constant(item, m)


def stack(items: Sequence, m: int | None = None) -> Jet:
    """Stack scalars/jets along a new leading axis."""
    items = list(items)
    if m is None:
        m = next((it.m for it in items if isinstance(it, Jet)), None)
        if m is None:
            raise ValueError("stack needs at least one Jet or an explicit m")
    jets = [_as_jet(it, m) for it in items]
    shape = np.broadcast_shapes(*(j.shape for j in jets))
    val = np.stack([np.broadcast_to(j.val, shape) for j in jets])
    grad = np.stack([np.broadcast_to(j.grad, shape + (m,)) for j in jets])
    if all(j.hess is None for j in jets):
        return Jet(val, grad)
    hess = np.stack([np.broadcast_to(j.hessian(), shape + (m, m)) for j in jets])
    return Jet(val, grad, hess)


def concatenate(items: Sequence, m: int | None = None) -> Jet:
    """Concatenate 1-D jets/arrays end to end."""
    items = list(items)
    if m is None:
        m = next(it.m for it in items if isinstance(it, Jet))
    jets = [_as_jet(np.atleast_1d(it) if not isinstance(it, Jet) else it, m) for it in items]
    jets = [j if j.ndim else j.reshape(1) for j in jets]
    val = np.concatenate([j.val for j in jets])
    grad = np.concatenate([j.grad for j in jets])
    if all(j.hess is None for j in jets):
        return Jet(val, grad)
    return Jet(val, grad, np.concatenate([j.hessian() for j in jets]))


def _to_vector_jet(out, m: int) -> Jet:
    if isinstance(out, Jet):
        return out.reshape(-1)
    if isinstance(out, np.ndarray) and out.dtype != object:
        return Jet.constant(out.ravel(), m)
    items = list(np.asarray(out, dtype=object).ravel()) if isinstance(out, np.ndarray) else list(out)
    if not items:
        return Jet(np.zeros(0), np.zeros((0, m)))
    return stack(items, m).reshape(-1)


def second_order(fun: Callable, x: np.ndarray, theta: np.ndarray, scalar: bool = False):
    """Value, gradient and Hessian of ``fun(x, theta)`` in the joint variable ``(x, theta)``.

    Returns ``(val, grad, hess)`` with shapes ``(k,)``, ``(k, m)``, ``(k, m, m)``
    (or scalar / ``(m,)`` / ``(m, m)`` when ``scalar``), ``m = len(x) + len(theta)``.
    """
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n = x.size
    z = seed(np.concatenate([x, theta]))
    m = z.m
    out = fun(z[:n], z[n:])
    if scalar:
        jet = out if isinstance(out, Jet) else Jet.constant(out, m)
        jet = jet.reshape(())
        return float(jet.val), jet.grad.copy(), jet.hessian().copy()
    jet = _to_vector_jet(out, m)
    return jet.val.copy(), jet.grad.copy(), jet.hessian().copy()
