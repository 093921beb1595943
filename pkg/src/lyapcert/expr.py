"""Expression language for systems and certificates.

Formulas are written over the time variable ``t`` and state variables
``x1 .. xn``::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := unary ('^' factor)?
    unary  := '-' unary | atom
    atom   := number | 't' | 'x' digits | func '(' expr (',' expr)? ')' | '(' expr ')'

Note that unary minus binds tighter than ``^``: ``-x1^2`` is ``(-x1)^2``.
Write ``-(x1^2)`` for the negated square.

Three evaluation paths share one tree:

* :meth:`Expression.evaluate` runs a compiled closure over Python floats and
  falls back to a checked tree walk to name the offending subexpression when
  a domain error occurs.
* :meth:`Expression.evaluate_many` walks the tree with numpy over a batch of
  points; domain errors become NaN entries.
* :meth:`Expression.gradient_many` walks the tree with forward-mode dual
  numbers (value plus one partial per input, batched).

At kinks of ``abs``, ``min`` and ``max`` the derivative is taken from the
positive side (``abs``) or from the second argument (``min``/``max`` ties).
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Num", "Time", "Var", "Neg", "BinOp", "Func", "Node",
    "Expression", "EvalPoint", "ExprSyntaxError", "ExprDomainError",
    "NonFiniteWarning", "parse", "evaluate", "gradient", "to_source",
]

UNARY_FUNCS = ("abs", "sqrt", "exp", "ln", "sin", "cos", "tanh")
BINARY_FUNCS = ("min", "max")


class ExprSyntaxError(ValueError):
    """Parse failure; ``offset`` is the byte offset into the source."""

    def __init__(self, message: str, source: str, offset: int):
        self.source = source
        self.offset = offset
        super().__init__(f"{message} at byte {offset}: {source!r}")


class ExprDomainError(ArithmeticError):
    def __init__(self, message: str, subexpression: str, t=None, x=None):
        self.subexpression = subexpression
        self.t = t
        self.x = x
        where = "" if t is None else f" at t={t!r}, x={list(x)!r}"
        super().__init__(f"{message} in '{subexpression}'{where}")


class NonFiniteWarning(RuntimeWarning):
    pass


# --- AST ------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Time:
    pass


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Func:
    name: str
    args: tuple


Node = Union[Num, Time, Var, Neg, BinOp, Func]


def integer_exponent(node: Node):
    """Return the exponent as int when it is an integer literal (optionally negated)."""
    sign = 1
    while isinstance(node, Neg):
        sign = -sign
        node = node.arg
    if isinstance(node, Num) and float(node.value).is_integer():
        return sign * int(node.value)
    return None


def walk(node: Node):
    yield node
    if isinstance(node, Neg):
        yield from walk(node.arg)
    elif isinstance(node, BinOp):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, Func):
        for a in node.args:
            yield from walk(a)


def node_to_source(node: Node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Time):
        return "t"
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        inner = node_to_source(node.arg)
        return f"-({inner})" if isinstance(node.arg, BinOp) else f"-{inner}"
    if isinstance(node, BinOp):
        parts = []
        for child in (node.left, node.right):
            s = node_to_source(child)
            parts.append(f"({s})" if isinstance(child, BinOp) else s)
        return f"{parts[0]} {node.op} {parts[1]}"
    if isinstance(node, Func):
        return f"{node.name}({', '.join(node_to_source(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


# --- parser ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class _Parser:
    def __init__(self, source: str, n: int):
        self.source = source
        self.n = n
        self.tokens = []  # (kind, text, char offset)
        pos = 0
        while pos < len(source):
            if source[pos:].strip() == "":
                break
            m = _TOKEN.match(source, pos)
            if m is None or m.end() == pos:
                start = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
                self.error(f"unexpected character {source[start]!r}", start)
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.tokens.append(("end", "", len(source)))
        self.i = 0

    def error(self, message, char_offset):
        raise ExprSyntaxError(message, self.source,
                              len(self.source[:char_offset].encode()))

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, tok, off = self.take()
        if tok != text:
            self.error(f"expected {text!r}, found {tok or 'end of input'!r}", off)

    def parse(self) -> Node:
        node = self.expr()
        kind, tok, off = self.peek()
        if kind != "end":
            self.error(f"unexpected token {tok!r}", off)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        node = self.unary()
        if self.peek()[1] == "^":
            self.take()
            node = BinOp("^", node, self.factor())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        kind, tok, off = self.take()
        if kind == "num":
            return Num(float(tok))
        if kind == "op" and tok == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if tok == "t":
                return Time()
            m = re.fullmatch(r"x(\d+)", tok)
            if m:
                index = int(m.group(1))
                if index < 1 or index > self.n:
                    self.error(f"variable index out of range: {tok} (dimension {self.n})", off)
                return Var(index)
            if tok in UNARY_FUNCS or tok in BINARY_FUNCS:
                self.expect("(")
                args = [self.expr()]
                if self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity = 1 if tok in UNARY_FUNCS else 2
                if len(args) != arity:
                    self.error(f"{tok} takes {arity} argument(s), got {len(args)}", off)
                return Func(tok, tuple(args))
            self.error(f"unknown identifier {tok!r}", off)
        self.error(f"unexpected {tok or 'end of input'!r}", off)


# --- scalar compiled path -------------------------------------------------


def _ipow(a, k):
    if k < 0:
        return 1.0 / _ipow(a, -k)
    result = 1.0
    for _ in range(k):
        result = result * a
    return result


def _fpow(a, b):
    if not a > 0:
        raise ValueError("non-integer power of non-positive base")
    return a ** b


def _min(a, b):
    if a != a or b != b:
        return math.nan
    return a if a < b else b


def _max(a, b):
    if a != a or b != b:
        return math.nan
    return a if a > b else b


_SCALAR_FUNCS = {
    "abs": "abs", "sqrt": "_sqrt", "exp": "_exp", "ln": "_log",
    "sin": "_sin", "cos": "_cos", "tanh": "_tanh", "min": "_min", "max": "_max",
}
_SCALAR_ENV = {
    "_ipow": _ipow, "_fpow": _fpow, "_min": _min, "_max": _max,
    "_sqrt": math.sqrt, "_exp": math.exp, "_log": math.log,
    "_sin": math.sin, "_cos": math.cos, "_tanh": math.tanh,
}


def _compile_source(node: Node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Time):
        return "t"
    if isinstance(node, Var):
        return f"x[{node.index - 1}]"
    if isinstance(node, Neg):
        return f"(-{_compile_source(node.arg)})"
    if isinstance(node, BinOp):
        a = _compile_source(node.left)
        b = _compile_source(node.right)
        if node.op == "^":
            k = integer_exponent(node.right)
            if k is not None:
                return f"_ipow({a}, {k})"
            return f"_fpow({a}, {b})"
        return f"({a} {node.op} {b})"
    if isinstance(node, Func):
        args = ", ".join(_compile_source(a) for a in node.args)
        return f"{_SCALAR_FUNCS[node.name]}({args})"
    raise TypeError(node)


# --- numpy tree walk ------------------------------------------------------


def _array_ipow(a, k):
    if k < 0:
        base = _array_ipow(a, -k)
        with np.errstate(all="ignore"):
            return np.where(base == 0.0, np.nan, 1.0 / np.where(base == 0.0, 1.0, base))
    result = np.ones_like(a)
    for _ in range(k):
        result = result * a
    return result


class _ArrayEvaluator:
    """Batched evaluation; ``strict`` raises on the first domain violation."""

    def __init__(self, t, X, strict=False):
        self.t = t
        self.X = X
        self.strict = strict

    def domain(self, bad, node, message):
        if self.strict and np.any(bad):
            i = int(np.argmax(bad))
            raise ExprDomainError(message, node_to_source(node),
                                  float(self.t[i]), self.X[i].tolist())

    def __call__(self, node):
        if isinstance(node, Num):
            return np.full(self.t.shape, float(node.value))
        if isinstance(node, Time):
            return self.t.astype(float, copy=True)
        if isinstance(node, Var):
            return self.X[:, node.index - 1].astype(float, copy=True)
        if isinstance(node, Neg):
            return -self(node.arg)
        if isinstance(node, BinOp):
            a = self(node.left)
            if node.op == "^":
                k = integer_exponent(node.right)
                if k is not None:
                    if k < 0:
                        self.domain(a == 0.0, node, "division by zero")
                    return _array_ipow(a, k)
                b = self(node.right)
                bad = ~(a > 0) & ~np.isnan(a)
                self.domain(bad, node, "non-integer power of non-positive base")
                with np.errstate(all="ignore"):
                    return np.where(bad, np.nan, np.power(np.where(bad, 1.0, a), b))
            b = self(node.right)
            with np.errstate(all="ignore"):
                if node.op == "+":
                    return a + b
                if node.op == "-":
                    return a - b
                if node.op == "*":
                    return a * b
            bad = b == 0.0
            self.domain(bad, node, "division by zero")
            with np.errstate(all="ignore"):
                return np.where(bad, np.nan, a / np.where(bad, 1.0, b))
        if isinstance(node, Func):
            args = [self(a) for a in node.args]
            a = args[0]
            name = node.name
            with np.errstate(all="ignore"):
                if name == "abs":
                    return np.abs(a)
                if name == "sqrt":
                    bad = a < 0
                    self.domain(bad, node, "square root of negative value")
                    return np.where(bad, np.nan, np.sqrt(np.where(bad, 0.0, a)))
                if name == "ln":
                    bad = a <= 0
                    self.domain(bad, node, "logarithm of non-positive value")
                    return np.where(bad, np.nan, np.log(np.where(bad, 1.0, a)))
                if name == "exp":
                    return np.exp(a)
                if name == "sin":
                    return np.sin(a)
                if name == "cos":
                    return np.cos(a)
                if name == "tanh":
                    return np.tanh(a)
                b = args[1]
                nan = np.isnan(a) | np.isnan(b)
                if name == "min":
                    return np.where(nan, np.nan, np.where(a < b, a, b))
                return np.where(nan, np.nan, np.where(a > b, a, b))
        raise TypeError(node)


class _DualEvaluator:
    """Forward-mode dual numbers over a batch.

    Each node yields ``(value, partials)`` with ``value`` of shape ``(m,)``
    and ``partials`` of shape ``(n + 1, m)``; row 0 is d/dt.
    """

    def __init__(self, t, X):
        self.t = t
        self.X = X
        self.m = t.shape[0]
        self.k = X.shape[1] + 1

    def zeros(self):
        return np.zeros((self.k, self.m))

    def __call__(self, node):
        if isinstance(node, Num):
            return np.full(self.m, float(node.value)), self.zeros()
        if isinstance(node, Time):
            d = self.zeros()
            d[0] = 1.0
            return self.t.astype(float, copy=True), d
        if isinstance(node, Var):
            d = self.zeros()
            d[node.index] = 1.0
            return self.X[:, node.index - 1].astype(float, copy=True), d
        if isinstance(node, Neg):
            v, d = self(node.arg)
            return -v, -d
        with np.errstate(all="ignore"):
            if isinstance(node, BinOp):
                return self.binop(node)
            if isinstance(node, Func):
                return self.func(node)
        raise TypeError(node)

    def binop(self, node):
        a, da = self(node.left)
        if node.op == "^":
            k = integer_exponent(node.right)
            if k is not None:
                value = _array_ipow(a, k)
                if k == 0:
                    return value, self.zeros()
                return value, k * _array_ipow(a, k - 1) * da
            b, db = self(node.right)
            bad = ~(a > 0)
            safe = np.where(bad, 1.0, a)
            value = np.where(bad, np.nan, np.power(safe, b))
            return value, value * (db * np.log(safe) + b * da / safe)
        b, db = self(node.right)
        if node.op == "+":
            return a + b, da + db
        if node.op == "-":
            return a - b, da - db
        if node.op == "*":
            return a * b, da * b + a * db
        bad = b == 0.0
        safe = np.where(bad, 1.0, b)
        value = np.where(bad, np.nan, a / safe)
        return value, (da - value * db) / safe

    def func(self, node):
        name = node.name
        a, da = self(node.args[0])
        if name == "abs":
            return np.abs(a), np.where(a >= 0, 1.0, -1.0) * da
        if name == "sqrt":
            bad = a < 0
            value = np.where(bad, np.nan, np.sqrt(np.where(bad, 0.0, a)))
            return value, da / (2.0 * value)
        if name == "exp":
            value = np.exp(a)
            return value, value * da
        if name == "ln":
            bad = a <= 0
            return np.where(bad, np.nan, np.log(np.where(bad, 1.0, a))), da / a
        if name == "sin":
            return np.sin(a), np.cos(a) * da
        if name == "cos":
            return np.cos(a), -np.sin(a) * da
        if name == "tanh":
            value = np.tanh(a)
            return value, (1.0 - value * value) * da
        b, db = self(node.args[1])
        pick_a = (a < b) if name == "min" else (a > b)
        nan = np.isnan(a) | np.isnan(b)
        value = np.where(nan, np.nan, np.where(pick_a, a, b))
        return value, np.where(pick_a, da, db)


# --- public surface -------------------------------------------------------


@dataclass(frozen=True)
class EvalPoint:
    t: float
    x: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if not math.isfinite(self.t) or not all(math.isfinite(v) for v in self.x):
            raise ValueError(f"evaluation point must be finite: t={self.t}, x={self.x}")


class Expression:
    """Parsed formula over ``t`` and ``x1..xn``. Immutable."""

    __slots__ = ("root", "n", "_fn")

    def __init__(self, root: Node, n: int):
        for node in walk(root):
            if isinstance(node, Var) and not 1 <= node.index <= n:
                raise ValueError(f"variable x{node.index} out of range for dimension {n}")
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "n", n)
        code = compile(f"lambda t, x: {_compile_source(root)}", "<expr>", "eval")
        object.__setattr__(self, "_fn", eval(code, dict(_SCALAR_ENV)))

    def __setattr__(self, name, value):
        raise AttributeError("Expression is immutable")

    def __eq__(self, other):
        return isinstance(other, Expression) and self.n == other.n and self.root == other.root

    def __hash__(self):
        return hash((self.root, self.n))

    def __repr__(self):
        return f"Expression({str(self)!r}, n={self.n})"

    def __str__(self):
        return node_to_source(self.root)

    @property
    def uses_time(self) -> bool:
        return any(isinstance(node, Time) for node in walk(self.root))

    def evaluate(self, t: float, x) -> float:
        xs = [float(v) for v in x]
        try:
            value = self._fn(float(t), xs)
        except (ArithmeticError, ValueError):
            # checked walk raises ExprDomainError or returns inf on overflow
            ev = _ArrayEvaluator(np.array([float(t)]), np.array([xs]).reshape(1, self.n),
                                 strict=True)
            value = float(ev(self.root)[0])
        value = float(value)
        if not math.isfinite(value):
            warnings.warn(f"non-finite value {value} from '{self}' at t={t}, x={xs}",
                          NonFiniteWarning, stacklevel=2)
        return value

    __call__ = evaluate

    def evaluate_many(self, t, X) -> np.ndarray:
        """Evaluate at ``m`` points; ``t`` has shape (m,), ``X`` shape (m, n).

        Domain violations yield NaN rather than raising.
        """
        t, X = _batch(t, X, self.n)
        return _ArrayEvaluator(t, X)(self.root)

    def gradient_many(self, t, X):
        """Return ``(value, d/dt, d/dx)`` with shapes (m,), (m,), (m, n)."""
        t, X = _batch(t, X, self.n)
        value, d = _DualEvaluator(t, X)(self.root)
        return value, d[0], d[1:].T.copy()

    def gradient(self, t: float, x):
        _, dt, dx = self.gradient_many(np.array([float(t)]), np.asarray(x, float).reshape(1, -1))
        return float(dt[0]), dx[0]


def _batch(t, X, n):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, n) if n else X.reshape(-1, 0)
    t = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
    return t, X


def parse(source: str, dimension: int) -> Expression:
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", source or "", 0)
    return Expression(_Parser(source, dimension).parse(), dimension)


def to_source(expr: Expression) -> str:
    return str(expr)


def _point(p, x):
    if isinstance(p, EvalPoint):
        return p.t, p.x
    return float(p), tuple(x)


def evaluate(expr: Expression, p, x=None) -> float:
    """Evaluate at an :class:`EvalPoint` (or at ``t, x``)."""
    t, xs = _point(p, x)
    return expr.evaluate(t, xs)


def gradient(expr: Expression, p, x=None):
    """Return ``(d/dt, d/dx)`` at an :class:`EvalPoint` (or at ``t, x``)."""
    t, xs = _point(p, x)
    return expr.gradient(t, xs)


def var(index: int) -> Node:
    return Var(index)


def max_zero(node: Node) -> Node:
    """``max(node, 0)``, the positive part used in the dissipation inequality."""
    return Func("max", (node, Num(0.0)))


def substitute(node: Node, mapping: dict) -> Node:
    """Replace variables by index, e.g. ``{1: Var(3)}`` rebinds x1 to x3."""
    if isinstance(node, Var):
        return mapping.get(node.index, node)
    if isinstance(node, Neg):
        return Neg(substitute(node.arg, mapping))
    if isinstance(node, BinOp):
        return BinOp(node.op, substitute(node.left, mapping), substitute(node.right, mapping))
    if isinstance(node, Func):
        return Func(node.name, tuple(substitute(a, mapping) for a in node.args))
    return node


def compile_vector(exprs):
    """Fast ``(t, x) -> list`` evaluator for several expressions at one point.

    Falls back to per-component :meth:`Expression.evaluate` (which names the
    offending subexpression) when the compiled path hits a domain error.
    """
    exprs = tuple(exprs)
    body = ", ".join(_compile_source(e.root) for e in exprs)
    fast = eval(compile(f"lambda t, x: [{body}]", "<vector>", "eval"), dict(_SCALAR_ENV))

    def call(t, x):
        try:
            return fast(t, x)
        except (ArithmeticError, ValueError):
            return [e.evaluate(t, x) for e in exprs]

    return call
