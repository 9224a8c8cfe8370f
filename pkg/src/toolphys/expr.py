"""Expression trees over named variables.

Trees are immutable and built from four node kinds: :class:`Const`,
:class:`Var`, :class:`Unary` (``neg``, ``square``, ``sqrt``, ``abs``) and
:class:`Binary` (``add``, ``sub``, ``mul``, ``div``, ``pow``).

The text form is fully parenthesized infix, e.g. ``((2.0 * x) + neg(y))``,
and :func:`parse` reads it back (it also accepts unparenthesized infix with
the usual precedence).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import DomainError, ParseError, UnboundSymbol

DIV_GUARD = 1e-12

UNARY_OPS = ("neg", "square", "sqrt", "abs")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")

_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_FROM_INFIX = {v: k for k, v in _INFIX.items()}


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite constant {self.value!r}")


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Node"

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary op {self.op!r}")


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary op {self.op!r}")


Node = Union[Const, Var, Unary, Binary]
ExpressionTree = Node


def const(value) -> Const:
    return Const(float(value))


def var(name: str) -> Var:
    return Var(name)


def children(node: Node) -> tuple:
    if isinstance(node, Unary):
        return (node.child,)
    if isinstance(node, Binary):
        return (node.left, node.right)
    return ()


def complexity(tree: Node) -> int:
    """Total node count."""
    return 1 + sum(complexity(c) for c in children(tree))


def leaf_symbols(tree: Node) -> frozenset:
    if isinstance(tree, Var):
        return frozenset((tree.name,))
    out = frozenset()
    for c in children(tree):
        out |= leaf_symbols(c)
    return out


# -- scalar evaluation --------------------------------------------------------

def _check(value: float) -> float:
    if not math.isfinite(value):
        raise DomainError("non-finite intermediate result")
    return value


def _pow(base: float, exponent: float) -> float:
    if abs(base) < DIV_GUARD and exponent < 0:
        raise DomainError("zero base with negative exponent")
    if base < 0 and not float(exponent).is_integer():
        raise DomainError("negative base with non-integer exponent")
    try:
        return float(base) ** float(exponent)
    except OverflowError as exc:
        raise DomainError("pow overflow") from exc


def evaluate(tree: Node, bindings: Mapping[str, float]) -> float:
    """Evaluate ``tree`` with scalar ``bindings``.

    Raises :class:`UnboundSymbol` for a missing variable and
    :class:`DomainError` for guarded division, sqrt of a negative number,
    non-real powers or overflow.
    """
    if isinstance(tree, Const):
        return tree.value
    if isinstance(tree, Var):
        try:
            return float(bindings[tree.name])
        except KeyError:
            raise UnboundSymbol(tree.name) from None
    if isinstance(tree, Unary):
        a = evaluate(tree.child, bindings)
        if tree.op == "neg":
            return -a
        if tree.op == "square":
            return _check(a * a)
        if tree.op == "sqrt":
            if a < 0:
                raise DomainError("sqrt of negative")
            return math.sqrt(a)
        return abs(a)
    a = evaluate(tree.left, bindings)
    b = evaluate(tree.right, bindings)
    op = tree.op
    if op == "add":
        return _check(a + b)
    if op == "sub":
        return _check(a - b)
    if op == "mul":
        return _check(a * b)
    if op == "div":
        if abs(b) < DIV_GUARD:
            raise DomainError("division by ~0")
        return _check(a / b)
    return _check(_pow(a, b))


# -- vectorized evaluation ------------------------------------------------------

def evaluate_array(tree: Node, columns: Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
    """Evaluate over arrays of samples; invalid samples come back as NaN.

    Mirrors :func:`evaluate` element-wise (same guards), which lets fitness
    code skip per-sample exception handling.
    """
    if n is None:
        n = len(next(iter(columns.values()))) if columns else 1
    with np.errstate(all="ignore"):
        out = _eval_arr(tree, columns, n)
        out = np.where(np.isfinite(out), out, np.nan)
    return out


def _eval_arr(tree, cols, n):
    if isinstance(tree, Const):
        return np.full(n, tree.value)
    if isinstance(tree, Var):
        try:
            return np.asarray(cols[tree.name], dtype=float)
        except KeyError:
            raise UnboundSymbol(tree.name) from None
    if isinstance(tree, Unary):
        a = _eval_arr(tree.child, cols, n)
        if tree.op == "neg":
            return -a
        if tree.op == "square":
            return a * a
        if tree.op == "sqrt":
            return np.where(a >= 0, np.sqrt(np.abs(a)), np.nan)
        return np.abs(a)
    a = _eval_arr(tree.left, cols, n)
    b = _eval_arr(tree.right, cols, n)
    op = tree.op
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return np.where(np.abs(b) < DIV_GUARD, np.nan, a / np.where(b == 0, 1.0, b))
    bad = ((np.abs(a) < DIV_GUARD) & (b < 0)) | ((a < 0) & (b != np.round(b)))
    return np.where(bad, np.nan, np.power(np.where(bad, 1.0, a), b))


# -- simplification -------------------------------------------------------------

def _can_fail(node: Node) -> bool:
    if isinstance(node, Unary) and node.op == "sqrt":
        return True
    if isinstance(node, Binary) and node.op in ("div", "pow"):
        return True
    return any(_can_fail(c) for c in children(node))


def _is_const(node, value=None) -> bool:
    return isinstance(node, Const) and (value is None or node.value == value)


def simplify(tree: Node) -> Node:
    """Constant-fold and drop identity operations.

    Never increases complexity. A subtree that could raise a domain error is
    never discarded, so evaluation errors are preserved.
    """
    if isinstance(tree, (Const, Var)):
        return tree
    if isinstance(tree, Unary):
        c = simplify(tree.child)
        if isinstance(c, Const):
            try:
                return Const(evaluate(Unary(tree.op, c), {}))
            except DomainError:
                return Unary(tree.op, c)
        if tree.op == "neg" and isinstance(c, Unary) and c.op == "neg":
            return c.child
        return Unary(tree.op, c)

    a = simplify(tree.left)
    b = simplify(tree.right)
    op = tree.op
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            return Const(evaluate(Binary(op, a, b), {}))
        except DomainError:
            return Binary(op, a, b)
    if op == "add":
        if _is_const(b, 0.0):
            return a
        if _is_const(a, 0.0):
            return b
    elif op == "sub":
        if _is_const(b, 0.0):
            return a
    elif op == "mul":
        if _is_const(b, 1.0):
            return a
        if _is_const(a, 1.0):
            return b
        if _is_const(a, 0.0) and not _can_fail(b):
            return Const(0.0)
        if _is_const(b, 0.0) and not _can_fail(a):
            return Const(0.0)
    elif op == "div":
        if _is_const(b, 1.0):
            return a
    elif op == "pow":
        if _is_const(b, 1.0):
            return a
    return Binary(op, a, b)


def substitute_constants(tree: Node, values) -> Node:
    """Return ``tree`` with its constants replaced, in pre-order, by ``values``."""
    it = iter(values)

    def rec(node):
        if isinstance(node, Const):
            return Const(float(next(it)))
        if isinstance(node, Var):
            return node
        if isinstance(node, Unary):
            return Unary(node.op, rec(node.child))
        return Binary(node.op, rec(node.left), rec(node.right))

    return rec(tree)


def constants(tree: Node) -> list:
    """Constant values in pre-order."""
    if isinstance(tree, Const):
        return [tree.value]
    out = []
    for c in children(tree):
        out.extend(constants(c))
    return out


# -- text form --------------------------------------------------------------------

def to_text(tree: Node) -> str:
    if isinstance(tree, Const):
        return repr(float(tree.value))
    if isinstance(tree, Var):
        return tree.name
    if isinstance(tree, Unary):
        return f"{tree.op}({to_text(tree.child)})"
    return f"({to_text(tree.left)} {_INFIX[tree.op]} {to_text(tree.right)})"


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list:
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        pos = m.end()
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
    return out


class _Parser:
    # precedence: + - < * / < unary minus < ^ (right-assoc) < atoms

    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            raise ParseError(f"expected {value or 'token'}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.i != len(self.toks):
            raise ParseError(f"trailing input at token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = _FROM_INFIX[self.take()[1]]
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = _FROM_INFIX[self.take()[1]]
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            if self.peek()[0] == "num":
                value = -float(self.take()[1])
                return self._maybe_pow(Const(value))
            return Unary("neg", self.unary())
        return self.power()

    def _maybe_pow(self, base):
        if self.peek() == ("op", "^"):
            self.take()
            return Binary("pow", base, self.unary())
        return base

    def power(self):
        return self._maybe_pow(self.atom())

    def atom(self):
        kind, value = self.take()
        if kind == "num":
            return Const(float(value))
        if kind == "name":
            if self.peek() == ("op", "("):
                if value not in UNARY_OPS:
                    raise ParseError(f"unknown function {value!r}")
                self.take("(")
                arg = self.expr()
                self.take(")")
                return Unary(value, arg)
            return Var(value)
        if value == "(":
            node = self.expr()
            self.take(")")
            return node
        raise ParseError(f"unexpected token {value!r}")


def parse(text: str) -> Node:
    return _Parser(text).parse()
