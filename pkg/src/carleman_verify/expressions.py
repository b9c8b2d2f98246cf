"""Small expression grammar for user-defined fields.

Grammar (whitespace ignored)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := primary ("^" unary)?
    primary := NUMBER | "x1".."xn" | "pi" | FUNC "(" expr ")" | "(" expr ")"
    FUNC    := sin | cos | exp

Parsed expressions are differentiated with sympy and compiled to numpy
callables that broadcast over points of shape ``(..., n)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .errors import ExpressionError

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)
_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}


def _tokenize(text):
    tokens = []
    pos = 0
    stripped = text.rstrip()
    while pos < len(stripped):
        m = _TOKEN.match(stripped, pos)
        if m is None or m.end() == pos:
            bad = pos + len(stripped[pos:]) - len(stripped[pos:].lstrip())
            raise ExpressionError(f"unexpected character {stripped[bad]!r}", text, bad)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(stripped)))
    return tokens


class _Parser:
    def __init__(self, text, dim):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.i = 0
        self.symbols = sp.symbols(f"x1:{dim + 1}", real=True)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            raise ExpressionError(f"expected {value!r}, found {val or 'end of input'!r}", self.text, pos)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected token {val!r}", self.text, pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            node = node + rhs if op == "+" else node - rhs
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            node = node * rhs if op == "*" else node / rhs
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return -self.unary()
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[1] == "^":
            self.take()
            return base ** self.unary()
        return base

    def primary(self):
        kind, val, pos = self.take()
        if kind == "num":
            return sp.Rational(val) if re.fullmatch(r"\d+", val) else sp.Float(val, 17)
        if kind == "name":
            if val in _FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return _FUNCS[val](arg)
            if val == "pi":
                return sp.pi
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                k = int(m.group(1))
                if not 1 <= k <= self.dim:
                    raise ExpressionError(f"coordinate {val} out of range for dimension {self.dim}", self.text, pos)
                return self.symbols[k - 1]
            raise ExpressionError(f"unknown name {val!r}", self.text, pos)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionError(f"unexpected token {val or 'end of input'!r}", self.text, pos)


def _compile(expr, symbols):
    fn = sp.lambdify(symbols, expr, modules="numpy")

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        out = fn(*np.moveaxis(x, -1, 0))
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

    return evaluate


@dataclass(eq=False)
class Expression:
    """A parsed scalar expression in the coordinates ``x1..xn``."""

    text: str
    dim: int
    sym: sp.Expr = field(repr=False)
    symbols: tuple = field(repr=False)

    def __post_init__(self):
        n = self.dim
        self._value = _compile(self.sym, self.symbols)
        self._grad = [_compile(sp.diff(self.sym, s), self.symbols) for s in self.symbols]
        self._hess = [
            [_compile(sp.diff(self.sym, self.symbols[j], self.symbols[k]), self.symbols) for k in range(n)]
            for j in range(n)
        ]

    def __call__(self, x):
        return self._value(x)

    def grad(self, x):
        return np.stack([g(x) for g in self._grad], axis=-1)

    def hess(self, x):
        rows = [np.stack([h(x) for h in row], axis=-1) for row in self._hess]
        return np.stack(rows, axis=-2)

    def diff(self, k):
        """Partial derivative with respect to ``x{k+1}`` as a new Expression."""
        d = sp.diff(self.sym, self.symbols[k])
        return Expression(f"d/dx{k + 1}({self.text})", self.dim, d, self.symbols)


def parse_expression(text, dim):
    """Parse ``text`` into an :class:`Expression` over ``dim`` coordinates."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression", str(text), 0)
    parser = _Parser(text, dim)
    sym = parser.parse()
    return Expression(text, dim, sym, parser.symbols)
