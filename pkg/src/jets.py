# src/jets.py
"""
Forward-mode truncated Taylor arithmetic in (t, x, y).

A Jet stores Taylor coefficients d^a u / a! for the multi-indices in
INDICES: every spatial partial up to total order 3, plus u_t, u_tx, u_ty.
The complement of INDICES is closed under adding indices, so truncated
products are exact for the retained coefficients. Coefficients are numpy
arrays, so one Jet evaluates a whole batch of points.
"""
from math import factorial
from typing import Dict, Tuple

import numpy as np

Index = Tuple[int, int, int]  # (order in t, order in x, order in y)

INDICES = (
    (0, 0, 0),
    (0, 1, 0), (0, 0, 1),
    (0, 2, 0), (0, 1, 1), (0, 0, 2),
    (0, 3, 0), (0, 2, 1), (0, 1, 2), (0, 0, 3),
    (1, 0, 0), (1, 1, 0), (1, 0, 1),
)
_POS: Dict[Index, int] = {idx: k for k, idx in enumerate(INDICES)}
_FACT = np.array([factorial(a) * factorial(b) * factorial(c) for a, b, c in INDICES], dtype=float)


def _product_table():
    table = []
    for g, (gt, gx, gy) in enumerate(INDICES):
        for a, (at, ax, ay) in enumerate(INDICES):
            rest = (gt - at, gx - ax, gy - ay)
            if min(rest) >= 0 and rest in _POS:
                table.append((g, a, _POS[rest]))
    return tuple(table)


_PRODUCTS = _product_table()
# highest total order kept; eps**(MAX_ORDER + 1) vanishes
MAX_ORDER = 3


class Jet:
    __slots__ = ("c",)
    __array_priority__ = 100

    def __init__(self, coefficients):
        self.c = coefficients

    # -- construction ------------------------------------------------------
    @classmethod
    def constant(cls, value, shape=()):
        value = np.broadcast_to(np.asarray(value, dtype=float), shape)
        c = np.zeros((len(INDICES),) + value.shape)
        c[0] = value
        return cls(c)

    @classmethod
    def variable(cls, value, direction: Index):
        value = np.asarray(value, dtype=float)
        c = np.zeros((len(INDICES),) + value.shape)
        c[0] = value
        c[_POS[direction]] = 1.0
        return cls(c)

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.c + other.c)
        c = self.c.copy()
        c[0] = c[0] + other
        return Jet(c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * np.asarray(other, dtype=float))
        a, b = self.c, other.c
        shape = np.broadcast_shapes(a.shape[1:], b.shape[1:])
        out = np.zeros((len(INDICES),) + shape)
        for g, i, j in _PRODUCTS:
            out[g] += a[i] * b[j]
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c / np.asarray(other, dtype=float))
        return self * recip(other)

    def __rtruediv__(self, other):
        return recip(self) * other

    def __pow__(self, n: int):
        if int(n) != n or n < 0:
            raise ValueError("only non-negative integer powers are supported")
        result = Jet.constant(1.0, self.c.shape[1:])
        base = self
        n = int(n)
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    # -- accessors ---------------------------------------------------------
    def partial(self, t: int = 0, x: int = 0, y: int = 0) -> np.ndarray:
        k = _POS.get((t, x, y))
        if k is None:
            raise ValueError(f"partial d_t^{t} d_x^{x} d_y^{y} is not carried by the jet")
        return self.c[k] * _FACT[k]

    @property
    def value(self):
        return self.c[0]

    u = value
    u_t = property(lambda self: self.partial(1, 0, 0))
    u_x = property(lambda self: self.partial(0, 1, 0))
    u_y = property(lambda self: self.partial(0, 0, 1))
    u_xx = property(lambda self: self.partial(0, 2, 0))
    u_xy = property(lambda self: self.partial(0, 1, 1))
    u_yy = property(lambda self: self.partial(0, 0, 2))
    u_xxx = property(lambda self: self.partial(0, 3, 0))
    u_xxy = property(lambda self: self.partial(0, 2, 1))
    u_xyy = property(lambda self: self.partial(0, 1, 2))
    u_yyy = property(lambda self: self.partial(0, 0, 3))
    u_tx = property(lambda self: self.partial(1, 1, 0))
    u_ty = property(lambda self: self.partial(1, 0, 1))

    def __repr__(self):
        return f"Jet(value={self.value!r})"


def variables(t, x, y):
    """Independent variables seeded for differentiation, broadcast to one shape."""
    t, x, y = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float),
                                  np.asarray(y, dtype=float))
    return Jet.variable(t, (1, 0, 0)), Jet.variable(x, (0, 1, 0)), Jet.variable(y, (0, 0, 1))


def _compose(a: Jet, derivatives) -> Jet:
    """f(a) from f(a0), f'(a0), f''(a0), f'''(a0)."""
    eps = Jet(a.c.copy())
    eps.c[0] = 0.0
    out = Jet.constant(0.0, a.c.shape[1:])
    out.c[0] = derivatives[0]
    power = None
    for n in range(1, MAX_ORDER + 1):
        power = eps if power is None else power * eps
        out = out + power * (derivatives[n] / factorial(n))
    return out


def _lift(a):
    return a if isinstance(a, Jet) else Jet.constant(a)


def exp(a) -> Jet:
    a = _lift(a)
    e = np.exp(a.c[0])
    return _compose(a, (e, e, e, e))


def sin(a) -> Jet:
    a = _lift(a)
    s, c = np.sin(a.c[0]), np.cos(a.c[0])
    return _compose(a, (s, c, -s, -c))


def cos(a) -> Jet:
    a = _lift(a)
    s, c = np.sin(a.c[0]), np.cos(a.c[0])
    return _compose(a, (c, -s, -c, s))


def recip(a) -> Jet:
    a = _lift(a)
    v = a.c[0]
    if np.any(v == 0):
        raise ZeroDivisionError("reciprocal of a jet with zero value")
    return _compose(a, (1.0 / v, -1.0 / v ** 2, 2.0 / v ** 3, -6.0 / v ** 4))
