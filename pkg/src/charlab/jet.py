"""Straight-line forward-mode code for hot evaluation loops.

The dual-number rules of :mod:`charlab.dual` are unrolled into generated
Python source: every tree node becomes a value temporary plus one tangent
temporary per requested lane (and, for second order, one per requested lane
pair).  A single call then returns the value and all requested partials,
with plain float arithmetic and no per-operation object allocation.

Domain checks call the same helpers as the object path, so errors carry the
same subexpression labels.
"""

from __future__ import annotations

import math

from . import dual
from .errors import DomainError
from .expr import FUNCTIONS, BinOp, Call, Neg, Num, Var, to_text


def _sqrt_slope(v, label):
    if v == 0.0:
        raise DomainError(label, "square root is not differentiable at 0")
    return 0.5 / v


def _sign(a):
    return 1.0 if a > 0.0 else (-1.0 if a < 0.0 else 0.0)


def _pow_slopes(a, b, label):
    """First and second derivative of a**b in a, for constant non-integer b."""
    if a <= 0.0:
        raise DomainError(label, "power not differentiable at non-positive base")
    return b * a ** (b - 1.0), b * (b - 1.0) * a ** (b - 2.0)


_NAMESPACE = {
    "__builtins__": {},
    "abs": abs,
    "_div": dual.div,
    "_powi": dual.powi,
    "_pow": dual.pow_,
    "_exp": dual.exp,
    "_log": dual.log,
    "_sqrt": dual.sqrt,
    "_sinh": dual.sinh,
    "_cosh": dual.cosh,
    "_sin": math.sin,
    "_cos": math.cos,
    "_tan": math.tan,
    "_tanh": math.tanh,
    "_sqrt_slope": _sqrt_slope,
    "_sign": _sign,
    "_pow_slopes": _pow_slopes,
}


class _Gen:
    def __init__(self, lanes, pairs):
        self.lanes = list(lanes)  # variable names
        self.pairs = list(pairs)  # (i, j) lane-index pairs for second order
        self.lines = []
        self.count = 0

    def tmp(self, code):
        name = f"_t{self.count}"
        self.count += 1
        self.lines.append(f"    {name} = {code}")
        return name

    # a node value is (v, first: list[str|None], second: list[str|None])

    def emit(self, node):
        if isinstance(node, Num):
            return repr(node.value), [None] * len(self.lanes), [None] * len(self.pairs)
        if isinstance(node, Var):
            first = ["1.0" if node.name == lane else None for lane in self.lanes]
            return "v_" + node.name, first, [None] * len(self.pairs)
        if isinstance(node, Neg):
            v, d1, d2 = self.emit(node.arg)
            return self.tmp(f"-{v}"), [self.neg(t) for t in d1], [self.neg(t) for t in d2]
        if isinstance(node, BinOp):
            return self.binop(node)
        return self.call(node)

    def neg(self, t):
        return None if t is None else self.tmp(f"-{t}")

    def add(self, *terms):
        """Sum of (sign, code) terms, skipping zeros."""
        parts = [(s, c) for s, c in terms if c is not None]
        if not parts:
            return None
        code = ""
        for k, (s, c) in enumerate(parts):
            if k == 0:
                code = c if s > 0 else f"-{c}"
            else:
                code += f" {'+' if s > 0 else '-'} {c}"
        return self.tmp(code) if len(parts) > 1 or parts[0][0] < 0 else parts[0][1]

    @staticmethod
    def powi(a, n, label):
        if n == 0.0:
            return "1.0"
        if n == 1.0:
            return a
        if n == 2.0:
            return f"{a} * {a}"
        if n > 0.0:
            return f"{a} ** {int(n)}"
        return f"_powi({a}, {n!r}, {label})"

    @staticmethod
    def mul(a, b):
        if a is None or b is None:
            return None
        if a == "1.0":
            return b
        if b == "1.0":
            return a
        return f"({a} * {b})"

    def chain(self, fp, fpp, d1, d2):
        """Tangents of f(a) given code for f'(a), f''(a) and the tangents of a."""
        first = [None if t is None else self.tmp(self.mul(fp, t)) for t in d1]
        second = []
        for (i, j), tij in zip(self.pairs, d2):
            cross = self.mul(fpp, self.mul(d1[i], d1[j])) if fpp is not None else None
            second.append(self.add((1, None if tij is None else self.mul(fp, tij)), (1, cross)))
        return first, second

    def any_tangent(self, d1, d2):
        return any(t is not None for t in d1) or any(t is not None for t in d2)

    def binop(self, node):
        a, a1, a2 = self.emit(node.left)
        b, b1, b2 = self.emit(node.right)
        label = repr(to_text(node))
        op = node.op
        if op in "+-":
            s = 1 if op == "+" else -1
            v = self.tmp(f"{a} {op} {b}")
            return (
                v,
                [self.add((1, x), (s, y)) for x, y in zip(a1, b1)],
                [self.add((1, x), (s, y)) for x, y in zip(a2, b2)],
            )
        if op == "*":
            v = self.tmp(f"{a} * {b}")
            first = [self.add((1, self.mul(a, y)), (1, self.mul(x, b))) for x, y in zip(a1, b1)]
            second = []
            for (i, j), xij, yij in zip(self.pairs, a2, b2):
                second.append(
                    self.add(
                        (1, self.mul(a, yij)),
                        (1, self.mul(a1[i], b1[j])),
                        (1, self.mul(a1[j], b1[i])),
                        (1, self.mul(xij, b)),
                    )
                )
            return v, first, second
        if op == "/":
            v = self.tmp(f"{a} / {b} if {b} != 0.0 else _div({a}, {b}, {label})")
            first = []
            for x, y in zip(a1, b1):
                num = self.add((1, x), (-1, self.mul(v, y)))
                first.append(None if num is None else self.tmp(f"{num} / {b}"))
            second = []
            for (i, j), xij, yij in zip(self.pairs, a2, b2):
                num = self.add(
                    (1, xij),
                    (-1, self.mul(first[i], b1[j])),
                    (-1, self.mul(first[j], b1[i])),
                    (-1, self.mul(v, yij)),
                )
                second.append(None if num is None else self.tmp(f"{num} / {b}"))
            return v, first, second
        # power
        r = node.right
        if isinstance(r, Num) and r.value == int(r.value) and abs(r.value) < 2**31:
            n = r.value
            v = self.tmp(self.powi(a, n, label))
            if not self.any_tangent(a1, a2) or n == 0.0:
                return v, [None] * len(a1), [None] * len(a2)
            fp = self.tmp(f"{n!r} * {a}" if n == 2.0 else f"{n!r} * {self.powi(a, n - 1.0, label)}")
            fpp = None
            if self.pairs and n != 1.0:
                fpp = self.tmp(f"{n * (n - 1.0)!r} * {self.powi(a, n - 2.0, label)}")
            return (v, *self.chain(fp, fpp, a1, a2))
        if isinstance(r, Num):
            v = self.tmp(f"_pow({a}, {b}, {label})")
            if not self.any_tangent(a1, a2):
                return v, [None] * len(a1), [None] * len(a2)
            fp = self.tmp(f"_pow_slopes({a}, {b}, {label})")
            fpp = self.tmp(f"{fp}[1]") if self.pairs else None
            fp = self.tmp(f"{fp}[0]")
            return (v, *self.chain(fp, fpp, a1, a2))
        # variable exponent: a^b = exp(b log a)
        if not self.any_tangent(a1, a2) and not self.any_tangent(b1, b2):
            return self.tmp(f"_pow({a}, {b}, {label})"), a1, a2
        return self.emit(Call("exp", (BinOp("*", r, Call("log", (node.left,))),)))

    def call(self, node):
        name = node.name
        label = repr(to_text(node))
        if name in ("min", "max"):
            a, a1, a2 = self.emit(node.args[0])
            b, b1, b2 = self.emit(node.args[1])
            cmp = "<=" if name == "min" else ">="
            c = self.tmp(f"{a} {cmp} {b}")
            v = self.tmp(f"{a} if {c} else {b}")

            def pick(x, y):
                if x is None and y is None:
                    return None
                return self.tmp(f"({x or '0.0'}) if {c} else ({y or '0.0'})")

            return v, [pick(x, y) for x, y in zip(a1, b1)], [pick(x, y) for x, y in zip(a2, b2)]
        a, a1, a2 = self.emit(node.args[0])
        active = self.any_tangent(a1, a2)
        labelled = FUNCTIONS[name][2]
        call_args = f"{a}, {label}" if labelled else a
        if name == "abs":
            v = self.tmp(f"abs({a})")
        else:
            v = self.tmp(f"_{name}({call_args})")
        if not active:
            return v, a1, a2
        two = bool(self.pairs)
        if name == "sin":
            fp, fpp = self.tmp(f"_cos({a})"), (self.tmp(f"-{v}") if two else None)
        elif name == "cos":
            fp = self.tmp(f"-_sin({a})")
            fpp = self.tmp(f"-{v}") if two else None
        elif name == "tan":
            fp = self.tmp(f"1.0 + {v} * {v}")
            fpp = self.tmp(f"2.0 * {v} * {fp}") if two else None
        elif name == "exp":
            fp, fpp = v, (v if two else None)
        elif name == "log":
            fp = self.tmp(f"1.0 / {a}")
            fpp = self.tmp(f"-{fp} * {fp}") if two else None
        elif name == "sqrt":
            fp = self.tmp(f"_sqrt_slope({v}, {label})")
            fpp = self.tmp(f"-{fp} / (2.0 * {a})") if two else None
        elif name == "sinh":
            fp, fpp = self.tmp(f"_cosh({a}, {label})"), (v if two else None)
        elif name == "cosh":
            fp, fpp = self.tmp(f"_sinh({a}, {label})"), (v if two else None)
        elif name == "tanh":
            fp = self.tmp(f"1.0 - {v} * {v}")
            fpp = self.tmp(f"-2.0 * {v} * {fp}") if two else None
        else:  # abs: slope sign(a), sign(0) = 0, zero curvature
            fp, fpp = self.tmp(f"_sign({a})"), None
        return (v, *self.chain(fp, fpp, a1, a2))


def compile_jet(root, params, lanes, pairs=()):
    """Build ``f(*params) -> (value, d_lane..., d2_pair...)``.

    ``params`` is the positional argument order (it may name variables the
    expression does not use); ``lanes`` are variable names to differentiate
    by; ``pairs`` are (i, j) index pairs into ``lanes`` for second partials.
    """
    gen = _Gen(lanes, pairs)
    v, d1, d2 = gen.emit(root)
    outs = [v] + [t or "0.0" for t in d1] + [t or "0.0" for t in d2]
    params = ", ".join("v_" + name for name in params)
    src = f"def _jet({params}):\n" + "\n".join(gen.lines) + ("\n" if gen.lines else "")
    src += f"    return ({', '.join(outs)},)\n"
    ns = dict(_NAMESPACE)
    exec(compile(src, "<jet>", "exec"), ns)
    return ns["_jet"]
