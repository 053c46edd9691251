"""Forward-mode dual numbers over numpy arrays.

A ``Dual`` carries a value and its directional derivative along one tangent
direction; pushing one through a computation yields the exact derivative of
every output with respect to that direction (a JVP). The toy stack's loss
and gradient checks use this as the analytic side against central
finite differences. Plain ndarrays mix freely with Duals.
"""

from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "dot")

    # make numpy defer to the reflected operators instead of broadcasting
    # elementwise into object arrays
    __array_ufunc__ = None

    def __init__(self, val, dot=None):
        self.val = np.asarray(val, dtype=np.float64)
        self.dot = np.zeros_like(self.val) if dot is None else np.asarray(dot, dtype=np.float64)
        if self.dot.shape != self.val.shape:
            raise ValueError(f"tangent shape {self.dot.shape} != value shape {self.val.shape}")

    # -- arithmetic ---------------------------------------------------
    def __add__(self, other):
        o = _lift(other)
        return Dual(self.val + o.val, self.dot + o.dot)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __sub__(self, other):
        o = _lift(other)
        return Dual(self.val - o.val, self.dot - o.dot)

    def __rsub__(self, other):
        o = _lift(other)
        return Dual(o.val - self.val, o.dot - self.dot)

    def __mul__(self, other):
        o = _lift(other)
        return Dual(self.val * o.val, self.dot * o.val + self.val * o.dot)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _lift(other)
        val = self.val / o.val
        return Dual(val, (self.dot - val * o.dot) / o.val)

    def __rtruediv__(self, other):
        return _lift(other) / self

    def __matmul__(self, other):
        o = _lift(other)
        return Dual(self.val @ o.val, self.dot @ o.val + self.val @ o.dot)

    def __rmatmul__(self, other):
        o = _lift(other)
        return Dual(o.val @ self.val, o.dot @ self.val + o.val @ self.dot)

    def __pow__(self, p):
        return Dual(self.val ** p, p * self.val ** (p - 1) * self.dot)

    # -- structure ----------------------------------------------------
    def __getitem__(self, idx):
        return Dual(self.val[idx], self.dot[idx])

    @property
    def shape(self):
        return self.val.shape

    @property
    def T(self):
        return Dual(self.val.T, self.dot.T)

    def reshape(self, *shape):
        return Dual(self.val.reshape(*shape), self.dot.reshape(*shape))

    def sum(self, axis=None, keepdims=False):
        return Dual(self.val.sum(axis=axis, keepdims=keepdims),
                    self.dot.sum(axis=axis, keepdims=keepdims))

    def mean(self, axis=None, keepdims=False):
        return Dual(self.val.mean(axis=axis, keepdims=keepdims),
                    self.dot.mean(axis=axis, keepdims=keepdims))


def _lift(x) -> Dual:
    return x if isinstance(x, Dual) else Dual(np.asarray(x, dtype=np.float64))


def value(x) -> np.ndarray:
    """Underlying value of a Dual or plain array."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=np.float64)


def is_dual(*xs) -> bool:
    return any(isinstance(x, Dual) for x in xs)


# -- elementwise functions (work on Duals and plain arrays) ------------

def exp(x):
    if isinstance(x, Dual):
        e = np.exp(x.val)
        return Dual(e, e * x.dot)
    return np.exp(x)


def tanh(x):
    if isinstance(x, Dual):
        t = np.tanh(x.val)
        return Dual(t, (1.0 - t * t) * x.dot)
    return np.tanh(x)


def sqrt(x):
    if isinstance(x, Dual):
        s = np.sqrt(x.val)
        return Dual(s, 0.5 * x.dot / s)
    return np.sqrt(x)


def sigmoid(x):
    if isinstance(x, Dual):
        s = 1.0 / (1.0 + np.exp(-x.val))
        return Dual(s, s * (1.0 - s) * x.dot)
    return 1.0 / (1.0 + np.exp(-x))


def outer(a, b):
    """Outer product of two vectors, Dual-aware."""
    if is_dual(a, b):
        a, b = _lift(a), _lift(b)
        return Dual(np.outer(a.val, b.val), np.outer(a.dot, b.val) + np.outer(a.val, b.dot))
    return np.outer(a, b)


def stack_rows(rows):
    """np.stack over a list of vectors / Duals (axis 0)."""
    if any(isinstance(r, Dual) for r in rows):
        lifted = [_lift(r) for r in rows]
        return Dual(np.stack([r.val for r in lifted]), np.stack([r.dot for r in lifted]))
    return np.stack(rows)


def solve(a, b):
    """Dual-aware linear solve: d(A^{-1} b) = A^{-1} (db - dA x)."""
    if is_dual(a, b):
        a, b = _lift(a), _lift(b)
        x = np.linalg.solve(a.val, b.val)
        dx = np.linalg.solve(a.val, b.dot - a.dot @ x)
        return Dual(x, dx)
    return np.linalg.solve(a, b)


def derivative(f, x0: np.ndarray, direction: np.ndarray) -> float:
    """Exact directional derivative of scalar f at x0 along direction.

    A non-Dual output means f does not depend on x0: derivative 0.
    """
    out = f(Dual(x0, direction))
    if not isinstance(out, Dual):
        if np.asarray(out).shape != ():
            raise ValueError("f must return a scalar")
        return 0.0
    if out.val.shape != ():
        raise ValueError("f must return a scalar")
    return float(out.dot)


def gradient(f, x0: np.ndarray) -> np.ndarray:
    """Coordinate-wise forward-mode gradient of scalar f at x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0).ravel()
    flat = x0.ravel()
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = 1.0
        grad[i] = derivative(f, flat.reshape(x0.shape), e.reshape(x0.shape))
    return grad.reshape(x0.shape)
