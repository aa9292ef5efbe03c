"""Parameterized unsafe-region templates.

Grammar: comparisons like ``y >= 6.375 - 0.025*i`` between linear expressions
in the model's variable names, float literals, +, -, *, and the sweep symbol
``i``. Coefficients may be affine in i (products may mention i on one side
only). Instantiating at an integer i yields a half-space over the state.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sets import HalfSpace

__all__ = ["UnsafeTemplate", "parse_template"]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<sym>\*|\+|-|\(|\)|>=|<=))"
)


class TemplateSyntaxError(ValueError):
    pass


class _Affine:
    """Linear form over state variables with coefficients affine in i."""

    def __init__(self, n: int):
        self.coef = np.zeros((n, 2))  # [:, 0] constant part, [:, 1] i part
        self.const = np.zeros(2)

    @staticmethod
    def number(n: int, v: float) -> "_Affine":
        a = _Affine(n)
        a.const[0] = v
        return a

    @staticmethod
    def symbol_i(n: int) -> "_Affine":
        a = _Affine(n)
        a.const[1] = 1.0
        return a

    @staticmethod
    def variable(n: int, idx: int) -> "_Affine":
        a = _Affine(n)
        a.coef[idx, 0] = 1.0
        return a

    def __add__(self, o: "_Affine") -> "_Affine":
        r = _Affine(self.coef.shape[0])
        r.coef = self.coef + o.coef
        r.const = self.const + o.const
        return r

    def __sub__(self, o: "_Affine") -> "_Affine":
        r = _Affine(self.coef.shape[0])
        r.coef = self.coef - o.coef
        r.const = self.const - o.const
        return r

    def is_scalar(self) -> bool:
        return not self.coef.any()

    def __mul__(self, o: "_Affine") -> "_Affine":
        if not self.is_scalar() and not o.is_scalar():
            raise TemplateSyntaxError("products of state variables are not linear")
        scal, form = (self, o) if self.is_scalar() else (o, self)
        if scal.const[1] != 0.0 and (form.const[1] != 0.0 or form.coef[:, 1].any()):
            raise TemplateSyntaxError("templates must stay affine in i (no i*i terms)")
        r = _Affine(self.coef.shape[0])
        c0, c1 = scal.const
        r.coef[:, 0] = c0 * form.coef[:, 0]
        r.coef[:, 1] = c0 * form.coef[:, 1] + c1 * form.coef[:, 0]
        r.const[0] = c0 * form.const[0]
        r.const[1] = c0 * form.const[1] + c1 * form.const[0]
        return r


@dataclass(frozen=True)
class UnsafeTemplate:
    """Half-space family {x : normal(i) . x <= offset(i)} affine in i."""

    expr: str
    normal0: np.ndarray
    normal1: np.ndarray
    offset0: float
    offset1: float

    def instantiate(self, i: int) -> HalfSpace:
        return HalfSpace(self.normal0 + i * self.normal1, self.offset0 + i * self.offset1)


def _tokenize(s: str) -> list[tuple[str, str]]:
    out = []
    pos = 0
    while pos < len(s):
        m = _TOKEN.match(s, pos)
        if m is None or m.end() == pos:
            if s[pos:].strip() == "":
                break
            raise TemplateSyntaxError(f"bad token at {s[pos:]!r}")
        pos = m.end()
        for kind in ("num", "name", "sym"):
            if m.group(kind) is not None:
                out.append((kind, m.group(kind)))
                break
    return out


def parse_template(expr: str, var_names: Sequence[str]) -> UnsafeTemplate:
    names = list(var_names)
    if "i" in names:
        raise TemplateSyntaxError("a state variable named 'i' clashes with the sweep symbol")
    n = len(names)
    tokens = _tokenize(expr)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take(expect=None):
        nonlocal pos
        if pos >= len(tokens):
            raise TemplateSyntaxError(f"unexpected end of template {expr!r}")
        tok = tokens[pos]
        if expect is not None and tok[1] != expect:
            raise TemplateSyntaxError(f"expected {expect!r}, got {tok[1]!r}")
        pos += 1
        return tok

    def parse_sum() -> _Affine:
        node = parse_term()
        while (tok := peek()) is not None and tok[1] in "+-":
            take()
            rhs = parse_term()
            node = node + rhs if tok[1] == "+" else node - rhs
        return node

    def parse_term() -> _Affine:
        node = parse_atom()
        while (tok := peek()) is not None and tok[1] == "*":
            take()
            node = node * parse_atom()
        return node

    def parse_atom() -> _Affine:
        tok = peek()
        if tok is not None and tok[1] == "-":
            take()
            return _Affine.number(n, -1.0) * parse_atom()
        kind, v = take()
        if kind == "num":
            return _Affine.number(n, float(v))
        if kind == "name":
            if v == "i":
                return _Affine.symbol_i(n)
            if v in names:
                return _Affine.variable(n, names.index(v))
            raise TemplateSyntaxError(f"unknown variable {v!r}; model has {names}")
        if v == "(":
            node = parse_sum()
            take(")")
            return node
        raise TemplateSyntaxError(f"unexpected token {v!r}")

    lhs = parse_sum()
    kind, op = take()
    if op not in (">=", "<="):
        raise TemplateSyntaxError(f"expected a comparison, got {op!r}")
    rhs = parse_sum()
    if pos != len(tokens):
        raise TemplateSyntaxError(f"trailing tokens in {expr!r}")

    # normalize to (lhs - rhs) <= 0 or flip for >=
    diff = (lhs - rhs) if op == "<=" else (rhs - lhs)
    if not diff.coef[:, 0].any() and not diff.coef[:, 1].any():
        raise TemplateSyntaxError("template mentions no state variable")
    return UnsafeTemplate(
        expr=expr,
        normal0=diff.coef[:, 0].copy(),
        normal1=diff.coef[:, 1].copy(),
        offset0=float(-diff.const[0]),
        offset1=float(-diff.const[1]),
    )
