"""Scalar expressions: recursive-descent parser, canonical printer, and
dual-number evaluation of values, gradients and Hessians.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'

Parsed trees are compiled once into a Python function whose arithmetic is
dispatched through :mod:`charlab.dual`, so the same code object evaluates
plain floats and (nested) dual numbers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import dual
from .dual import Dual
from .errors import ExpressionSyntaxError, UnboundVariable, UnknownFunction

# name -> (arity, helper name in the compiled namespace, takes a label)
FUNCTIONS = {
    "sin": (1, "_sin", False),
    "cos": (1, "_cos", False),
    "tan": (1, "_tan", False),
    "exp": (1, "_exp", True),
    "log": (1, "_log", True),
    "sqrt": (1, "_sqrt", True),
    "sinh": (1, "_sinh", True),
    "cosh": (1, "_cosh", True),
    "tanh": (1, "_tanh", False),
    "abs": (1, "_abs", False),
    "min": (2, "_min", False),
    "max": (2, "_max", False),
}

_NAMESPACE = {
    "__builtins__": {},
    "_sin": dual.sin,
    "_cos": dual.cos,
    "_tan": dual.tan,
    "_exp": dual.exp,
    "_log": dual.log,
    "_sqrt": dual.sqrt,
    "_sinh": dual.sinh,
    "_cosh": dual.cosh,
    "_tanh": dual.tanh,
    "_abs": dual.abs_,
    "_min": dual.min_,
    "_max": dual.max_,
    "_div": dual.div,
    "_pow": dual.pow_,
    "_powi": dual.powi,
}


# --- tree -----------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Num | Var | Neg | BinOp | Call


def to_text(node) -> str:
    """Canonical, fully parenthesized rendering that re-parses to the same tree."""
    if isinstance(node, Expression):
        node = node.root
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)}{node.op}{to_text(node.right)})"
    return f"{node.name}({','.join(to_text(a) for a in node.args)})"


def _walk_vars(node, out):
    if isinstance(node, Var):
        if node.name not in out:
            out.append(node.name)
    elif isinstance(node, Neg):
        _walk_vars(node.arg, out)
    elif isinstance(node, BinOp):
        _walk_vars(node.left, out)
        _walk_vars(node.right, out)
    elif isinstance(node, Call):
        for a in node.args:
            _walk_vars(a, out)


# --- tokenizer / parser ------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[a-zA-Z][a-zA-Z0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = []  # (kind, value, char_pos)
        pos = 0
        while True:
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                rest = text[pos:]
                stripped = len(rest) - len(rest.lstrip())
                pos += stripped
                if pos >= len(text):
                    break
                raise ExpressionSyntaxError(text, self._byte(pos), "number, identifier or operator")
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def _byte(self, char_pos):
        return len(self.text[:char_pos].encode("utf-8"))

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected, tok=None):
        tok = tok or self.peek()
        raise ExpressionSyntaxError(self.text, self._byte(tok[2]), expected)

    def expect(self, op):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != op:
            self.fail(f"'{op}'")
        return self.take()

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail("operator or end of input")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "^":
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def atom(self):
        tok = self.take()
        kind, value, _ = tok
        if kind == "num":
            v = float(value)
            if not math.isfinite(v):
                self.fail("finite number", tok)
            return Num(v)
        if kind == "id":
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(":
                if value not in FUNCTIONS:
                    raise UnknownFunction(value, self._byte(tok[2]))
                self.take()
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                arity = FUNCTIONS[value][0]
                if len(args) != arity:
                    self.fail(f"{arity} argument(s) to {value}")
                self.expect(")")
                return Call(value, tuple(args))
            return Var(value)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        self.fail("number, identifier or '('", tok)


# --- compilation -------------------------------------------------------------


def _emit(node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return "v_" + node.name
    if isinstance(node, Neg):
        return f"(-{_emit(node.arg)})"
    if isinstance(node, BinOp):
        left, right = _emit(node.left), _emit(node.right)
        label = repr(to_text(node))
        if node.op == "/":
            return f"_div({left}, {right}, {label})"
        if node.op == "^":
            r = node.right
            if isinstance(r, Num) and r.value == int(r.value) and abs(r.value) < 2**31:
                return f"_powi({left}, {right}, {label})"
            return f"_pow({left}, {right}, {label})"
        return f"({left} {node.op} {right})"
    _, helper, labelled = FUNCTIONS[node.name]
    args = [_emit(a) for a in node.args]
    if labelled:
        args.append(repr(to_text(node)))
    return f"{helper}({', '.join(args)})"


def _compile(root, free_vars) -> Callable:
    params = ", ".join("v_" + v for v in free_vars)
    src = f"lambda {params}: {_emit(root)}"
    return eval(compile(src, "<expression>", "eval"), dict(_NAMESPACE))


@dataclass(frozen=True)
class Expression:
    """Immutable parsed expression; ``free_vars`` lists names in order of first use."""

    root: Node
    free_vars: tuple
    text: str = ""
    fn: Callable = field(default=None, repr=False, compare=False)

    def __call__(self, bindings: Mapping[str, float]) -> float:
        return evaluate(self, bindings)

    def __str__(self):
        return self.text or to_text(self.root)

    def kernel(self, order: Sequence[str]) -> "Kernel":
        return Kernel(self, order)


def parse(text: str) -> Expression:
    root = _Parser(text).parse()
    names = []
    _walk_vars(root, names)
    free = tuple(names)
    return Expression(root, free, text, _compile(root, free))


def constant(text: str) -> float:
    """Evaluate a closed expression such as ``"cos(0.5)"``."""
    e = parse(text)
    if e.free_vars:
        raise UnboundVariable(e.free_vars[0])
    return float(e.fn())


def _args(e: Expression, b: Mapping[str, float]):
    try:
        return [float(b[v]) for v in e.free_vars]
    except KeyError as exc:
        raise UnboundVariable(exc.args[0]) from None


def evaluate(e: Expression, b: Mapping[str, float]) -> float:
    return float(e.fn(*_args(e, b)))


def grad(e: Expression, wrt: Sequence[str], b: Mapping[str, float]) -> np.ndarray:
    """Exact first partials, one dual-number pass per variable in ``wrt``."""
    vals = _args(e, b)
    out = np.zeros(len(wrt))
    for k, name in enumerate(wrt):
        if name in e.free_vars:
            out[k] = _partial(e.fn, vals, e.free_vars.index(name))
    return out


def hessian(e: Expression, wrt: Sequence[str], b: Mapping[str, float]) -> np.ndarray:
    """Second partials by dual-over-dual passes; the upper triangle is mirrored."""
    vals = _args(e, b)
    idx = [e.free_vars.index(v) if v in e.free_vars else None for v in wrt]
    return _hessian(e.fn, vals, idx)


def _partial(fn, vals, j):
    args = list(vals)
    args[j] = Dual(vals[j], 1.0)
    return float(dual.tangent(fn(*args)))


def _second(fn, vals, i, j):
    args = list(vals)
    if i == j:
        args[i] = Dual(Dual(vals[i], 1.0), Dual(1.0, 0.0))
    else:
        args[i] = Dual(Dual(vals[i], 0.0), Dual(1.0, 0.0))
        args[j] = Dual(Dual(vals[j], 1.0), Dual(0.0, 0.0))
    r = fn(*args)
    if not isinstance(r, Dual):
        return 0.0
    return float(dual.tangent(r.eps))


def _hessian(fn, vals, idx):
    n = len(idx)
    out = np.zeros((n, n))
    for a in range(n):
        if idx[a] is None:
            continue
        for c in range(a, n):
            if idx[c] is None:
                continue
            out[a, c] = out[c, a] = _second(fn, vals, idx[a], idx[c])
    return out


class Kernel:
    """An expression bound to a fixed positional argument order.

    Hot loops (RK4 stages, Newton steps) call this instead of building
    dictionaries; variables of ``order`` the expression does not use simply
    get zero partials.  Derivatives come from generated straight-line
    forward-mode code (:mod:`charlab.jet`), compiled once per request shape.
    """

    def __init__(self, e: Expression, order: Sequence[str]):
        missing = [v for v in e.free_vars if v not in order]
        if missing:
            raise UnboundVariable(missing[0])
        self.expr = e
        self.order = tuple(order)
        self._fn = e.fn
        self._pick = [self.order.index(v) for v in e.free_vars]
        self._jets = {}

    def value(self, args) -> float:
        return float(self._fn(*[float(args[i]) for i in self._pick]))

    def jet(self, wrt: Sequence[int], rows: Sequence[int] | None = None):
        """Compiled ``f(*args) -> (value, d/d wrt..., d2 rows x wrt...)``.

        Arguments are passed in kernel order.  Entries for variables the
        expression does not use are the literal 0.0.
        """
        return self._jet(wrt, rows)[0]

    def _jet(self, wrt, rows):
        key = (tuple(wrt), None if rows is None else tuple(rows))
        entry = self._jets.get(key)
        if entry is None:
            from .jet import compile_jet

            # lanes for variables the expression does not use simply never
            # pick up a tangent, so the generator emits literal zeros there
            lanes = list(dict.fromkeys(list(wrt) + list(rows or ())))
            lane_of = {k: i for i, k in enumerate(lanes)}
            pairs = [(lane_of[r], lane_of[k]) for r in rows or () for k in wrt]
            fn = compile_jet(self.expr.root, self.order, [self.order[k] for k in lanes], pairs)
            # output layout is (value, lanes..., pairs...); drop lanes only in rows
            extra = len(lanes) - len(wrt)
            if extra:
                m = len(wrt)

                def fn(*args, _fn=fn, _m=m, _skip=extra):
                    out = _fn(*args)
                    return (*out[: 1 + _m], *out[1 + _m + _skip :])

            entry = (fn, len(wrt))
            self._jets[key] = entry
        return entry

    def value_and_partials(self, args, wrt: Sequence[int]):
        fn, m = self._jet(wrt, None)
        out = fn(*[float(a) for a in args])
        return float(out[0]), list(out[1 : 1 + m])

    def partials(self, args, wrt: Sequence[int]) -> list:
        return self.value_and_partials(args, wrt)[1]

    def derivatives(self, args, wrt: Sequence[int], rows: Sequence[int]):
        """Value, first partials over ``wrt`` and the rows x wrt Hessian block in one call."""
        fn, m = self._jet(wrt, rows)
        out = fn(*[float(a) for a in args])
        h = np.array(out[1 + m :], dtype=float).reshape(len(rows), m)
        return float(out[0]), list(out[1 : 1 + m]), h

    def hessian(self, args, wrt: Sequence[int], rows: Sequence[int] | None = None) -> np.ndarray:
        """Second partials, rows x wrt (rows defaults to wrt)."""
        if rows is None:
            h = self.derivatives(args, wrt, wrt)[2]
            return np.triu(h) + np.triu(h, 1).T
        return self.derivatives(args, wrt, rows)[2]
