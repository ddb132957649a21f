"""Arithmetic expressions for scenario fields.

Scenario files describe the external velocity ``V(t, x)``, the interaction
kernels ``W(t, x)`` / ``W'(t, x)`` and the mobilities ``v(rho_1, ..., rho_S)``
as plain strings. This module parses them into immutable trees and evaluates
them on scalars or numpy arrays.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?          # right associative
    primary := number | name | name '(' args ')' | '(' expr ')'

Domain violations (``log`` of a non-positive number, ``sqrt`` of a negative
number, division by zero, a negative base raised to a non-integer power, or
an overflow) raise :class:`DomainError` instead of leaking NaN or Inf.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Union

import numpy as np

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifier",
    "ArityError",
    "EvalError",
    "MissingBinding",
    "DomainError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "FieldExpr",
    "FUNCTIONS",
    "CONSTANTS",
    "parse",
    "evaluate",
    "to_source",
]


class ExprError(ValueError):
    """Base class for every parse or evaluation failure."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int, source: str = ""):
        self.position = position
        self.source = source
        super().__init__(f"{message} at offset {position}")


class UnknownIdentifier(ExprError):
    def __init__(self, name: str, position: int):
        self.name = name
        self.position = position
        super().__init__(f"unknown identifier {name!r} at offset {position}")


class ArityError(ExprError):
    def __init__(self, name: str, expected: int, got: int, position: int):
        self.name = name
        self.position = position
        super().__init__(
            f"function {name}() takes {expected} argument(s), got {got} "
            f"(offset {position})"
        )


class EvalError(ExprError):
    pass


class MissingBinding(EvalError):
    pass


class DomainError(EvalError):
    pass


# -- tree ---------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Node", ...]


Node = Union[Num, Var, Neg, BinOp, Call]

Value = Union[float, np.ndarray]


def _check(cond, what: str) -> None:
    if np.any(cond):
        raise DomainError(what)


def _log(y):
    _check(np.less_equal(y, 0.0), "log of a non-positive number")
    return np.log(y)


def _sqrt(y):
    _check(np.less(y, 0.0), "sqrt of a negative number")
    return np.sqrt(y)


def _pos(y):
    return np.maximum(y, 0.0)


def _sinc(y):
    # unnormalised sin(y)/y, continuous at 0
    return np.sinc(np.divide(y, np.pi))


def _pow(base, expo):
    bad = np.less(base, 0.0) & np.not_equal(expo, np.round(expo))
    _check(bad, "negative base raised to a non-integer power")
    _check(np.equal(base, 0.0) & np.less(expo, 0.0), "zero raised to a negative power")
    return np.power(base, expo)


def _div(a, b):
    _check(np.equal(b, 0.0), "division by zero")
    return np.divide(a, b)


# name -> (arity, implementation)
FUNCTIONS: dict[str, tuple[int, Callable[..., Value]]] = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "log": (1, _log),
    "abs": (1, np.abs),
    "sign": (1, np.sign),
    "sqrt": (1, _sqrt),
    "pos": (1, _pos),
    "sinc": (1, _sinc),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
    "pow": (2, _pow),
}

CONSTANTS: dict[str, float] = {"pi": math.pi}

_BINARY: dict[str, Callable[[Value, Value], Value]] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": _div,
    "^": _pow,
}


# -- parser -------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            pos_bad = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {source[pos_bad]!r}", pos_bad, source)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, free_vars: frozenset[str]):
        self.source = source
        self.free_vars = free_vars
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        kind, value, pos = self.take()
        if value != text or kind != "op":
            what = "end of input" if kind == "end" else repr(value)
            raise ExprSyntaxError(f"expected {text!r}, found {what}", pos, self.source)

    def parse(self) -> Node:
        node = self.expr()
        kind, value, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {value!r}", pos, self.source)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Node:
        kind, value, pos = self.take()
        if kind == "num":
            return Num(float(value))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                return self.call(value, pos)
            if value in self.free_vars:
                return Var(value)
            if value in CONSTANTS:
                return Var(value)
            if value in FUNCTIONS:
                raise ExprSyntaxError(f"expected '(' after function {value!r}", self.peek()[2], self.source)
            raise UnknownIdentifier(value, pos)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(value)
        raise ExprSyntaxError(f"unexpected {what}", pos, self.source)

    def call(self, name: str, pos: int) -> Node:
        if name not in FUNCTIONS:
            raise UnknownIdentifier(name, pos)
        self.expect("(")
        args: list[Node] = []
        if self.peek()[1] != ")":
            args.append(self.expr())
            while self.peek()[1] == "," and self.peek()[0] == "op":
                self.take()
                args.append(self.expr())
        self.expect(")")
        arity = FUNCTIONS[name][0]
        if len(args) != arity:
            raise ArityError(name, arity, len(args), pos)
        return Call(name, tuple(args))


# -- compiled evaluation ------------------------------------------------------


def _compile(node: Node) -> Callable[[Mapping[str, Value]], Value]:
    if isinstance(node, Num):
        v = node.value
        return lambda env: v
    if isinstance(node, Var):
        name = node.name
        if name in CONSTANTS:
            c = CONSTANTS[name]
            return lambda env: env.get(name, c)
        return lambda env: env[name]
    if isinstance(node, Neg):
        f = _compile(node.operand)
        return lambda env: np.negative(f(env))
    if isinstance(node, BinOp):
        a, b, op = _compile(node.left), _compile(node.right), _BINARY[node.op]
        return lambda env: op(a(env), b(env))
    if isinstance(node, Call):
        impl = FUNCTIONS[node.name][1]
        fs = [_compile(arg) for arg in node.args]
        if len(fs) == 1:
            (f,) = fs
            return lambda env: impl(f(env))
        return lambda env: impl(*(g(env) for g in fs))
    raise TypeError(f"not an expression node: {node!r}")


def _variables(node: Node) -> Iterable[str]:
    if isinstance(node, Var):
        yield node.name
    elif isinstance(node, Neg):
        yield from _variables(node.operand)
    elif isinstance(node, BinOp):
        yield from _variables(node.left)
        yield from _variables(node.right)
    elif isinstance(node, Call):
        for arg in node.args:
            yield from _variables(arg)


@dataclass(frozen=True)
class FieldExpr:
    """A parsed expression together with the variables it may reference.

    Instances are immutable and callable: ``expr(t=0.0, x=xs)`` evaluates the
    tree with numpy broadcasting over array bindings.
    """

    root: Node
    free_vars: frozenset[str]
    source: str = ""
    _fn: Callable = field(default=None, repr=False, compare=False, hash=False)
    _used: frozenset = field(default=frozenset(), repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_fn", _compile(self.root))
        used = frozenset(
            v for v in _variables(self.root) if v not in CONSTANTS or v in self.free_vars
        )
        object.__setattr__(self, "_used", used)

    @property
    def used_vars(self) -> frozenset[str]:
        return self._used

    def depends_on(self, name: str) -> bool:
        return name in self.used_vars

    def __call__(self, **bindings: Value) -> Value:
        return evaluate(self, bindings)

    def __str__(self) -> str:
        return self.source or to_source(self.root)


def parse(source: str, free_vars: Iterable[str] = ()) -> FieldExpr:
    """Parse ``source`` into a :class:`FieldExpr` over ``free_vars``."""
    names = frozenset(free_vars)
    root = _Parser(source, names).parse()
    return FieldExpr(root, names, source.strip())


def evaluate(expr: FieldExpr, bindings: Mapping[str, Value]) -> Value:
    """Evaluate ``expr``; array bindings broadcast, scalar inputs give a float."""
    for name in expr.used_vars:
        if name not in bindings and name not in CONSTANTS:
            raise MissingBinding(f"no value bound for {name!r} in {expr}")
    with np.errstate(all="ignore"):
        out = expr._fn(bindings)
    finite = np.isfinite(out)
    if not np.all(finite):
        inputs_finite = all(np.all(np.isfinite(bindings[n])) for n in expr.used_vars if n in bindings)
        if inputs_finite:
            raise DomainError(f"non-finite result evaluating {expr}")
    if np.ndim(out) == 0:
        return float(out)
    return out


# -- printing -----------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt_num(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return 5


def to_source(node: Node) -> str:
    """Render a tree with the minimal parentheses needed to reparse it identically."""
    if isinstance(node, FieldExpr):
        node = node.root
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = to_source(node.operand)
        if _prec(node.operand) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        left, right = to_source(node.left), to_source(node.right)
        if node.op == "^":
            # base must be atomic; exponent may be a unary or another power
            if _prec(node.left) <= p:
                left = f"({left})"
            if _prec(node.right) < _PREC["neg"]:
                right = f"({right})"
            return f"{left}^{right}"
        if _prec(node.left) < p:
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
        return f"{left} {node.op} {right}"
    raise TypeError(f"not an expression node: {node!r}")
