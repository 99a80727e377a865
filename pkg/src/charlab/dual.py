"""Forward-mode dual numbers and the elementary functions compiled expressions call.

A :class:`Dual` carries a value and one tangent.  Components may themselves be
duals, which is how second derivatives are obtained (dual-over-dual).  Every
function below accepts either a plain float or a :class:`Dual`.
"""

import math

from .errors import DomainError


class Dual:
    __slots__ = ("re", "eps")

    def __init__(self, re, eps):
        self.re = re
        self.eps = eps

    def __repr__(self):
        return f"Dual({self.re!r}, {self.eps!r})"

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.re + o.re, self.eps + o.eps)
        return Dual(self.re + o, self.eps)

    def __radd__(self, o):
        return Dual(o + self.re, self.eps)

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.re - o.re, self.eps - o.eps)
        return Dual(self.re - o, self.eps)

    def __rsub__(self, o):
        return Dual(o - self.re, -self.eps)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.re * o.re, self.re * o.eps + self.eps * o.re)
        return Dual(self.re * o, self.eps * o)

    def __rmul__(self, o):
        return Dual(o * self.re, o * self.eps)

    def __neg__(self):
        return Dual(-self.re, -self.eps)


def real(x):
    """Innermost real part of a possibly nested dual."""
    while isinstance(x, Dual):
        x = x.re
    return x


def tangent(x):
    """First-order tangent of ``x`` (0.0 for constants)."""
    return x.eps if isinstance(x, Dual) else 0.0


def _overflow(label):
    return DomainError(label, "overflow")


def div(a, b, label):
    if real(b) == 0.0:
        raise DomainError(label, "division by zero")
    if isinstance(b, Dual):
        q = div(a.re if isinstance(a, Dual) else a, b.re, label)
        da = a.eps if isinstance(a, Dual) else 0.0
        return Dual(q, div(da - q * b.eps, b.re, label))
    if isinstance(a, Dual):
        return Dual(div(a.re, b, label), div(a.eps, b, label))
    return a / b


def powi(a, n, label):
    """``a`` raised to the integer-valued float ``n``."""
    if n == 0.0:
        return 1.0
    if isinstance(a, Dual):
        return Dual(powi(a.re, n, label), n * powi(a.re, n - 1.0, label) * a.eps)
    if a == 0.0 and n < 0.0:
        raise DomainError(label, "division by zero")
    try:
        return a ** int(n)
    except OverflowError:
        raise _overflow(label) from None


def pow_(a, b, label):
    if isinstance(b, Dual):
        if real(a) <= 0.0:
            raise DomainError(label, "non-positive base with variable exponent")
        return exp(b * log(a, label), label)
    if b == int(b) and abs(b) < 2**31:
        return powi(a, b, label)
    ra = real(a)
    if ra < 0.0:
        raise DomainError(label, "negative base with non-integer exponent")
    if ra == 0.0 and (b < 0.0 or isinstance(a, Dual)):
        raise DomainError(label, "zero base")
    if isinstance(a, Dual):
        return Dual(pow_(a.re, b, label), b * pow_(a.re, b - 1.0, label) * a.eps)
    try:
        return a**b
    except OverflowError:
        raise _overflow(label) from None


def sin(x):
    if isinstance(x, Dual):
        return Dual(sin(x.re), cos(x.re) * x.eps)
    return math.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(cos(x.re), -sin(x.re) * x.eps)
    return math.cos(x)


def tan(x):
    if isinstance(x, Dual):
        t = tan(x.re)
        return Dual(t, (1.0 + t * t) * x.eps)
    return math.tan(x)


def exp(x, label="exp"):
    if isinstance(x, Dual):
        e = exp(x.re, label)
        return Dual(e, e * x.eps)
    try:
        return math.exp(x)
    except OverflowError:
        raise _overflow(label) from None


def log(x, label="log"):
    if real(x) <= 0.0:
        raise DomainError(label, "logarithm of non-positive value")
    if isinstance(x, Dual):
        return Dual(log(x.re, label), div(x.eps, x.re, label))
    return math.log(x)


def sqrt(x, label="sqrt"):
    r = real(x)
    if r < 0.0:
        raise DomainError(label, "square root of negative value")
    if isinstance(x, Dual):
        if r == 0.0:
            raise DomainError(label, "square root is not differentiable at 0")
        s = sqrt(x.re, label)
        return Dual(s, div(x.eps, 2.0 * s, label))
    return math.sqrt(x)


def sinh(x, label="sinh"):
    if isinstance(x, Dual):
        return Dual(sinh(x.re, label), cosh(x.re, label) * x.eps)
    try:
        return math.sinh(x)
    except OverflowError:
        raise _overflow(label) from None


def cosh(x, label="cosh"):
    if isinstance(x, Dual):
        return Dual(cosh(x.re, label), sinh(x.re, label) * x.eps)
    try:
        return math.cosh(x)
    except OverflowError:
        raise _overflow(label) from None


def tanh(x):
    if isinstance(x, Dual):
        t = tanh(x.re)
        return Dual(t, (1.0 - t * t) * x.eps)
    return math.tanh(x)


def abs_(x):
    # d|x|/dx = sign(x), with sign(0) = 0
    if isinstance(x, Dual):
        r = real(x)
        s = 1.0 if r > 0.0 else (-1.0 if r < 0.0 else 0.0)
        return Dual(abs_(x.re), s * x.eps)
    return abs(x)


def min_(a, b):
    return a if real(a) <= real(b) else b


def max_(a, b):
    return a if real(a) >= real(b) else b
