"""Symbolic scalar expressions.

Expressions are immutable trees built from constants, coordinate variables,
unary functions and binary operators.  They carry everything the rest of the
package needs from component functions: exact partial derivatives, a weak
rule-based simplifier, strict evaluation (domain errors raise, they never
come back as NaN) and compilation to the postfix programs run by
:mod:`orbitkit._kernels`.

Grammar accepted by :func:`parse`::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom (('^' | '**') unary)?
    atom   := number | name | func '(' expr ')' | '(' expr ')'

``func`` is one of ``sin cos exp log sqrt bump`` or ``bumpd<k>`` for the
k-th derivative of ``bump``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels as K

UNARY_FUNCS = ("sin", "cos", "exp", "log", "sqrt", "bump")
_BINARY_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at byte offset {offset}")
        self.name = name
        self.offset = offset


class ArityError(ExprError):
    pass


class DomainError(ExprError, ArithmeticError):
    pass


class DimensionError(ExprError):
    pass


# ---------------------------------------------------------------------------
# nodes


class Expr:
    """Base class of expression nodes.  Subclasses are frozen dataclasses."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __neg__(self):
        return neg(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v):
            raise ExprError(f"non-finite constant {v!r}")
        object.__setattr__(self, "value", 0.0 if v == 0.0 else v)


@dataclass(frozen=True, eq=True)
class Var(Expr):
    index: int
    name: str


@dataclass(frozen=True, eq=True)
class Unary(Expr):
    op: str
    arg: Expr
    order: int = 0  # derivative order, only used by "bump"


@dataclass(frozen=True, eq=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Const(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


def is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def variables(e: Expr) -> set[int]:
    """Indices of the coordinates ``e`` depends on."""
    out: set[int] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.index)
        elif isinstance(node, Unary):
            stack.append(node.arg)
        elif isinstance(node, Binary):
            stack.extend((node.left, node.right))
    return out


# ---------------------------------------------------------------------------
# printing


def _format_const(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        text = str(int(v))
    else:
        text = repr(v)
    return f"({text})" if v < 0 else text


def to_text(e: Expr) -> str:
    """Canonical fully parenthesized infix text; parses back to ``e``."""
    if isinstance(e, Const):
        return _format_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        inner = to_text(e.arg)
        if e.op == "neg":
            return f"(-{inner})"
        if e.op == "bump" and e.order:
            return f"bumpd{e.order}({inner})"
        return f"{e.op}({inner})"
    if isinstance(e, Binary):
        return f"({to_text(e.left)} {_BINARY_SYMBOL[e.op]} {to_text(e.right)})"
    raise TypeError(e)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)
_BUMPD = re.compile(r"bumpd(\d+)$")
_POSITIONAL = re.compile(r"x([1-9]\d*)$")


class _Token(NamedTuple):
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    raw = text.encode()
    # byte offsets: map character index -> byte index
    char_to_byte = np.cumsum([0] + [len(ch.encode()) for ch in text]) if len(raw) != len(text) else None

    def byte(i):
        return int(char_to_byte[i]) if char_to_byte is not None else i

    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", byte(bad))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), byte(start)))
        pos = m.end()
    tokens.append(_Token("end", "", len(raw)))
    return tokens


class _Parser:
    def __init__(self, text: str, names: Sequence[str] | None, dim: int | None):
        self.tokens = _tokenize(text)
        self.i = 0
        self.names = list(names) if names is not None else None
        self.dim = dim if dim is not None else (len(self.names) if self.names is not None else None)

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.take()
        if tok.text != text or tok.kind == "end":
            found = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", tok.offset)
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.offset)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = self.take().text
            rhs = self.term()
            e = Binary("add" if op == "+" else "sub", e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = self.take().text
            rhs = self.unary()
            e = Binary("mul" if op == "*" else "div", e, rhs)
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text in ("-", "+"):
            self.take()
            inner = self.unary()
            if tok.text == "+":
                return inner
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Unary("neg", inner)
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text in ("^", "**"):
            self.take()
            return Binary("pow", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "name":
            if self.peek().text == "(" and self.peek().kind == "op":
                return self.call(tok)
            return self.variable(tok)
        if tok.kind == "op" and tok.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"unexpected {found}", tok.offset)

    def call(self, name_tok: _Token) -> Expr:
        name = name_tok.text
        order = 0
        m = _BUMPD.match(name)
        if m:
            order = int(m.group(1))
            fname = "bump"
        elif name in UNARY_FUNCS:
            fname = name
        else:
            raise UnknownIdentifierError(name, name_tok.offset)
        self.expect("(")
        args = []
        if self.peek().text != ")":
            args.append(self.expr())
            while self.peek().text == "," and self.peek().kind == "op":
                self.take()
                args.append(self.expr())
        self.expect(")")
        if len(args) != 1:
            raise ArityError(f"{name} takes 1 argument, got {len(args)} (byte offset {name_tok.offset})")
        return Unary(fname, args[0], order)

    def variable(self, tok: _Token) -> Expr:
        name = tok.text
        if self.names is not None and name in self.names:
            return Var(self.names.index(name), name)
        m = _POSITIONAL.match(name)
        if m:
            idx = int(m.group(1)) - 1
            if self.dim is None or idx < self.dim:
                canonical = self.names[idx] if self.names is not None else name
                return Var(idx, canonical)
        raise UnknownIdentifierError(name, tok.offset)


def parse(text: str, names: Sequence[str] | None = None, dim: int | None = None) -> Expr:
    """Parse ``text`` into an expression.

    Parameters
    ----------
    text : str
        Infix source.
    names : sequence of str, optional
        Coordinate names of the enclosing space.  Positional aliases
        ``x1..xn`` are accepted as well.
    dim : int, optional
        Number of coordinates when ``names`` is not given.  Without either,
        any ``x<k>`` is accepted.
    """
    return _Parser(text, names, dim).parse()


# ---------------------------------------------------------------------------
# evaluation


def _unary_value(op: str, a: float, order: int) -> float:
    if op == "neg":
        return -a
    if op == "sin":
        return math.sin(a)
    if op == "cos":
        return math.cos(a)
    if op == "exp":
        if a > 709.0:
            raise DomainError(f"exp overflow at {a!r}")
        return math.exp(a)
    if op == "log":
        if a <= 0.0:
            raise DomainError(f"log of non-positive value {a!r}")
        return math.log(a)
    if op == "sqrt":
        if a < 0.0:
            raise DomainError(f"sqrt of negative value {a!r}")
        return math.sqrt(a)
    if op == "bump":
        if order > K.MAX_BUMP_ORDER:
            raise ExprError(f"bump derivative order {order} exceeds {K.MAX_BUMP_ORDER}")
        return float(K.bump_derivative(order, a))
    raise ExprError(f"unknown unary op {op!r}")


def _binary_value(op: str, a: float, b: float) -> float:
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b
    if op == "pow":
        if a == 0.0 and b < 0.0:
            raise DomainError("zero to a negative power")
        if a < 0.0 and not float(b).is_integer():
            raise DomainError(f"negative base {a!r} to non-integer power {b!r}")
        try:
            return float(a**b)
        except OverflowError as exc:
            raise DomainError(f"overflow in {a!r}^{b!r}") from exc
    raise ExprError(f"unknown binary op {op!r}")


def _eval(e: Expr, x) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return float(x[e.index])
    if isinstance(e, Unary):
        v = _unary_value(e.op, _eval(e.arg, x), e.order)
    else:
        v = _binary_value(e.op, _eval(e.left, x), _eval(e.right, x))
    if not math.isfinite(v):
        raise DomainError(f"non-finite value while evaluating {to_text(e)}")
    return v


def evaluate(e: Expr, point, dim: int | None = None) -> float:
    """Evaluate ``e`` at ``point``.

    Raises :class:`DomainError` instead of returning NaN or infinity, and
    :class:`DimensionError` when ``point`` is too short for the variables used
    (or does not have length ``dim`` when given).
    """
    x = np.asarray(point, dtype=float).reshape(-1)
    if dim is not None and x.shape[0] != dim:
        raise DimensionError(f"point has {x.shape[0]} coordinates, expected {dim}")
    used = variables(e)
    if used and max(used) >= x.shape[0]:
        raise DimensionError(f"point has {x.shape[0]} coordinates, expression uses x{max(used) + 1}")
    return _eval(e, x)


# ---------------------------------------------------------------------------
# smart constructors (local simplification rules)


def _fold(op: str, *vals: float) -> Expr | None:
    try:
        if len(vals) == 1:
            v = _unary_value(op, vals[0], 0)
        else:
            v = _binary_value(op, *vals)
    except (DomainError, OverflowError, ValueError):
        return None
    if not math.isfinite(v):
        return None
    return Const(v)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold("add", a.value, b.value) or Binary("add", a, b)
    if is_const(a, 0.0):
        return b
    if is_const(b, 0.0):
        return a
    if isinstance(b, Unary) and b.op == "neg":
        return sub(a, b.arg)
    if isinstance(a, Unary) and a.op == "neg":
        return sub(b, a.arg)
    if a == b:
        return mul(Const(2.0), a)
    return Binary("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold("sub", a.value, b.value) or Binary("sub", a, b)
    if a == b:
        return ZERO
    if is_const(b, 0.0):
        return a
    if is_const(a, 0.0):
        return neg(b)
    if isinstance(b, Unary) and b.op == "neg":
        return add(a, b.arg)
    return Binary("sub", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold("mul", a.value, b.value) or Binary("mul", a, b)
    if is_const(a, 0.0) or is_const(b, 0.0):
        return ZERO
    if is_const(a, 1.0):
        return b
    if is_const(b, 1.0):
        return a
    if is_const(a, -1.0):
        return neg(b)
    if is_const(b, -1.0):
        return neg(a)
    if isinstance(b, Const):
        a, b = b, a
    if isinstance(a, Const) and isinstance(b, Binary) and b.op == "mul" and isinstance(b.left, Const):
        return mul(Const(a.value * b.left.value), b.right)
    if isinstance(a, Unary) and a.op == "neg" and isinstance(b, Unary) and b.op == "neg":
        return mul(a.arg, b.arg)
    return Binary("mul", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold("div", a.value, b.value) or Binary("div", a, b)
    if is_const(b, 1.0):
        return a
    if is_const(b, -1.0):
        return neg(a)
    if is_const(a, 0.0) and not is_const(b, 0.0):
        return ZERO
    if a == b and not is_const(b, 0.0):
        return ONE
    return Binary("div", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold("pow", a.value, b.value) or Binary("pow", a, b)
    if is_const(b, 1.0):
        return a
    if is_const(b, 0.0):
        return ONE
    if is_const(a, 1.0):
        return ONE
    return Binary("pow", a, b)


def func(op: str, a: Expr, order: int = 0) -> Expr:
    if op == "neg":
        return neg(a)
    if isinstance(a, Const):
        try:
            v = _unary_value(op, a.value, order)
        except DomainError:
            v = math.nan
        if math.isfinite(v):
            return Const(v)
    return Unary(op, a, order)


_BUILD = {"add": add, "sub": sub, "mul": mul, "div": div, "pow": power}


def _rebuild(e: Expr) -> Expr:
    if isinstance(e, Unary):
        return func(e.op, _rebuild(e.arg), e.order)
    if isinstance(e, Binary):
        return _BUILD[e.op](_rebuild(e.left), _rebuild(e.right))
    return e


def simplify(e: Expr) -> Expr:
    """Apply identity folding, constant folding and ``x - x -> 0`` to a fixpoint."""
    for _ in range(50):
        nxt = _rebuild(e)
        if nxt == e:
            return nxt
        e = nxt
    return e


# ---------------------------------------------------------------------------
# differentiation


def _d(e: Expr, i: int) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Unary):
        u = e.arg
        du = _d(u, i)
        if is_const(du, 0.0):
            return ZERO
        if e.op == "neg":
            return neg(du)
        if e.op == "sin":
            return mul(func("cos", u), du)
        if e.op == "cos":
            return neg(mul(func("sin", u), du))
        if e.op == "exp":
            return mul(e, du)
        if e.op == "log":
            return div(du, u)
        if e.op == "sqrt":
            return div(du, mul(Const(2.0), e))
        if e.op == "bump":
            return mul(func("bump", u, e.order + 1), du)
        raise ExprError(f"unknown unary op {e.op!r}")
    a, b = e.left, e.right
    da, db = _d(a, i), _d(b, i)
    if e.op == "add":
        return add(da, db)
    if e.op == "sub":
        return sub(da, db)
    if e.op == "mul":
        return add(mul(da, b), mul(a, db))
    if e.op == "div":
        return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
    if e.op == "pow":
        if isinstance(b, Const):
            return mul(mul(b, power(a, Const(b.value - 1.0))), da)
        if isinstance(a, Const) and a.value > 0:
            return mul(mul(e, Const(math.log(a.value))), db)
        return mul(e, add(mul(db, func("log", a)), div(mul(b, da), a)))
    raise ExprError(f"unknown binary op {e.op!r}")


def differentiate(e: Expr, var: int) -> Expr:
    """Exact partial derivative with respect to coordinate index ``var``."""
    if var < 0:
        raise ExprError(f"invalid coordinate index {var}")
    return simplify(_d(e, var))


# ---------------------------------------------------------------------------
# symbolic / numerical vanishing


class Vanishing(Enum):
    SYMBOLIC = "symbolically zero"
    NUMERIC = "numerically zero"
    NONZERO = "nonzero"


def vanishing(exprs: Sequence[Expr], samples: np.ndarray, threshold: float = 1e-10) -> Vanishing:
    """Classify a tuple of expressions as symbolically, numerically or not zero.

    ``samples`` holds evaluation points (rows); points where evaluation fails
    are ignored.
    """
    simplified = [simplify(e) for e in exprs]
    if all(is_const(e, 0.0) for e in simplified):
        return Vanishing.SYMBOLIC
    values = K.eval_points(compile_exprs(simplified).kernel_args, np.ascontiguousarray(samples, dtype=float))
    good = np.all(np.isfinite(values), axis=1)
    if not good.any():
        return Vanishing.NONZERO
    if np.max(np.abs(values[good])) <= threshold:
        return Vanishing.NUMERIC
    return Vanishing.NONZERO


# ---------------------------------------------------------------------------
# compilation


class Program(NamedTuple):
    code: np.ndarray
    args: np.ndarray
    consts: np.ndarray
    starts: np.ndarray

    @property
    def kernel_args(self):
        return (self.code, self.args, self.consts, self.starts)

    @property
    def count(self) -> int:
        return self.starts.shape[0] - 1


_UNARY_CODE = {
    "neg": K.OP_NEG,
    "sin": K.OP_SIN,
    "cos": K.OP_COS,
    "exp": K.OP_EXP,
    "log": K.OP_LOG,
    "sqrt": K.OP_SQRT,
    "bump": K.OP_BUMP,
}
_BINARY_CODE = {"add": K.OP_ADD, "sub": K.OP_SUB, "mul": K.OP_MUL, "div": K.OP_DIV, "pow": K.OP_POW}


def compile_exprs(exprs: Sequence[Expr]) -> Program:
    """Encode expressions as one postfix program for the numeric kernels."""
    code: list[int] = []
    args: list[int] = []
    consts: list[float] = []
    const_index: dict[float, int] = {}
    starts = [0]

    def emit(e: Expr):
        # iterative post-order to survive deep trees
        stack: list[tuple[Expr, bool]] = [(e, False)]
        while stack:
            node, visited = stack.pop()
            if isinstance(node, Const):
                key = node.value
                if key not in const_index:
                    const_index[key] = len(consts)
                    consts.append(key)
                code.append(K.OP_CONST)
                args.append(const_index[key])
            elif isinstance(node, Var):
                code.append(K.OP_VAR)
                args.append(node.index)
            elif visited:
                if isinstance(node, Unary):
                    if node.op == "bump" and node.order > K.MAX_BUMP_ORDER:
                        raise ExprError(f"bump derivative order {node.order} exceeds {K.MAX_BUMP_ORDER}")
                    code.append(_UNARY_CODE[node.op])
                    args.append(node.order)
                else:
                    code.append(_BINARY_CODE[node.op])
                    args.append(0)
            else:
                stack.append((node, True))
                if isinstance(node, Unary):
                    stack.append((node.arg, False))
                else:
                    stack.append((node.right, False))
                    stack.append((node.left, False))

    for e in exprs:
        emit(e)
        starts.append(len(code))
    return Program(
        np.asarray(code, dtype=np.int64),
        np.asarray(args, dtype=np.int64),
        np.asarray(consts if consts else [0.0], dtype=np.float64),
        np.asarray(starts, dtype=np.int64),
    )


def evaluate_many(exprs: Sequence[Expr], points) -> np.ndarray:
    """Evaluate expressions at many points through the compiled kernel.

    Entries where evaluation fails are NaN; callers that need strict errors
    use :func:`evaluate`.
    """
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    return K.eval_points(compile_exprs(exprs).kernel_args, pts)
