"""Batched second-order forward derivatives.

A ``Jet`` holds values ``(n,)``, gradients ``(n, d)`` and Hessians
``(n, d, d)`` of ``n`` independent scalar functions of ``d`` local variables.
"""

from __future__ import annotations

import numpy as np


class Jet:
    __slots__ = ("val", "grad", "hess")

    def __init__(self, val, grad, hess):
        self.val = val
        self.grad = grad
        self.hess = hess

    @classmethod
    def variable(cls, val, index: int, dim: int) -> "Jet":
        val = np.asarray(val, dtype=float)
        g = np.zeros(val.shape + (dim,))
        g[..., index] = 1.0
        return cls(val, g, np.zeros(val.shape + (dim, dim)))

    @classmethod
    def constant(cls, val, n: int, dim: int) -> "Jet":
        v = np.broadcast_to(np.asarray(val, dtype=float), (n,)).copy()
        return cls(v, np.zeros((n, dim)), np.zeros((n, dim, dim)))

    def __add__(self, o):
        if isinstance(o, Jet):
            return Jet(self.val + o.val, self.grad + o.grad, self.hess + o.hess)
        return Jet(self.val + o, self.grad, self.hess)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.val, -self.grad, -self.hess)

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if isinstance(o, Jet):
            outer = self.grad[..., :, None] * o.grad[..., None, :]
            return Jet(
                self.val * o.val,
                self.val[..., None] * o.grad + o.val[..., None] * self.grad,
                self.val[..., None, None] * o.hess
                + o.val[..., None, None] * self.hess
                + outer
                + np.swapaxes(outer, -1, -2),
            )
        o = np.asarray(o, dtype=float)
        return Jet(self.val * o, self.grad * o[..., None], self.hess * o[..., None, None])

    __rmul__ = __mul__

    def apply(self, f, df, d2f) -> "Jet":
        """Compose with a scalar function given its value and two derivatives."""
        return Jet(
            f,
            df[..., None] * self.grad,
            df[..., None, None] * self.hess + d2f[..., None, None] * self.grad[..., :, None] * self.grad[..., None, :],
        )

    def reciprocal(self) -> "Jet":
        v = self.val
        return self.apply(1.0 / v, -1.0 / v**2, 2.0 / v**3)

    def __truediv__(self, o):
        if isinstance(o, Jet):
            return self * o.reciprocal()
        return self * (1.0 / np.asarray(o, dtype=float))

    def square(self) -> "Jet":
        return self * self


def compose_field(value, grad, hess, jx: Jet, jy: Jet) -> Jet:
    """Jet of F(jx, jy) for a planar field F with given value/gradient/Hessian."""
    gx, gy = jx.grad, jy.grad
    g = grad[:, 0, None] * gx + grad[:, 1, None] * gy
    h = (
        grad[:, 0, None, None] * jx.hess
        + grad[:, 1, None, None] * jy.hess
        + hess[:, 0, 0, None, None] * gx[:, :, None] * gx[:, None, :]
        + hess[:, 1, 1, None, None] * gy[:, :, None] * gy[:, None, :]
        + hess[:, 0, 1, None, None] * (gx[:, :, None] * gy[:, None, :] + gy[:, :, None] * gx[:, None, :])
    )
    return Jet(value, g, h)
