"""Hash-consed expression trees for observables and vector fields.

Grammar: state variables x1..xn, the time symbol t, float constants, +, *,
non-negative integer powers, sin, cos. Construction goes through the factory
functions below, which fold constants, prune zeros/ones, and intern nodes,
so structurally equal expressions are the *same* object. That makes
deduplication and memoized evaluation cheap in the lifting hot loops.

Canonical strings (`x1^2*sin(t)`) round-trip through parse/format exactly.
"""

from __future__ import annotations

import math
import re
from typing import Callable, Iterable, Sequence

import numpy as np

from .numerics.intervals import Interval

__all__ = [
    "Expr",
    "Const",
    "Var",
    "TimeVar",
    "const",
    "var",
    "time_var",
    "add",
    "mul",
    "int_pow",
    "sin_of",
    "cos_of",
    "sum_of",
    "product_of",
    "eval_point",
    "eval_array",
    "eval_interval",
    "time_derivative",
    "substitute_time",
    "max_var_index",
    "contains_time",
    "monomial_form",
    "format_expression",
    "parse_expression",
    "compile_point_fn",
]

_TABLE: dict[tuple, "Expr"] = {}


def _intern(key: tuple, build: Callable[[], "Expr"]) -> "Expr":
    node = _TABLE.get(key)
    if node is None:
        node = build()
        _TABLE[key] = node
    return node


class Expr:
    __slots__ = ()

    def __repr__(self) -> str:
        return format_expression(self)

    def __reduce__(self):
        # interned nodes pickle via their canonical string
        return (parse_expression, (format_expression(self),))


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = value


class Var(Expr):
    __slots__ = ("index",)

    def __init__(self, index: int):
        self.index = index


class TimeVar(Expr):
    __slots__ = ()


class Add(Expr):
    __slots__ = ("left", "right")

    def __init__(self, left: Expr, right: Expr):
        self.left = left
        self.right = right


class Mul(Expr):
    __slots__ = ("left", "right")

    def __init__(self, left: Expr, right: Expr):
        self.left = left
        self.right = right


class Pow(Expr):
    __slots__ = ("base", "power")

    def __init__(self, base: Expr, power: int):
        self.base = base
        self.power = power


class Sin(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        self.arg = arg


class Cos(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        self.arg = arg


def const(value: float) -> Expr:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"constants must be finite, got {value}")
    if value == 0.0:
        value = 0.0  # normalize -0.0
    return _intern(("c", value), lambda: Const(value))


def var(index: int) -> Expr:
    if index < 0:
        raise ValueError("variable index must be non-negative")
    return _intern(("x", index), lambda: Var(index))


def time_var() -> Expr:
    return _intern(("t",), lambda: TimeVar())


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return const(a.value + b.value)
    if isinstance(a, Const) and a.value == 0.0:
        return b
    if isinstance(b, Const) and b.value == 0.0:
        return a
    return _intern(("+", id(a), id(b)), lambda: Add(a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const):
        if a.value == 0.0:
            return a
        if a.value == 1.0:
            return b
        if isinstance(b, Const):
            return const(a.value * b.value)
    if isinstance(b, Const):
        if b.value == 0.0:
            return b
        if b.value == 1.0:
            return a
    return _intern(("*", id(a), id(b)), lambda: Mul(a, b))


def int_pow(base: Expr, power: int) -> Expr:
    if power < 0:
        raise ValueError("powers must be non-negative")
    if power == 0:
        return const(1.0)
    if power == 1:
        return base
    if isinstance(base, Const):
        return const(base.value**power)
    return _intern(("^", id(base), power), lambda: Pow(base, power))


def sin_of(arg: Expr) -> Expr:
    if isinstance(arg, Const):
        return const(math.sin(arg.value))
    return _intern(("sin", id(arg)), lambda: Sin(arg))


def cos_of(arg: Expr) -> Expr:
    if isinstance(arg, Const):
        return const(math.cos(arg.value))
    return _intern(("cos", id(arg)), lambda: Cos(arg))


def sum_of(terms: Iterable[Expr]) -> Expr:
    """Left-associated sum; empty input gives 0."""
    acc = const(0.0)
    for t in terms:
        acc = add(acc, t)
    return acc


def product_of(factors: Iterable[Expr]) -> Expr:
    """Left-associated product; empty input gives 1."""
    acc = const(1.0)
    for f in factors:
        acc = mul(acc, f)
    return acc


# ---------------------------------------------------------------------------
# evaluation


def eval_point(e: Expr, x: Sequence[float], t: float = 0.0) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return float(x[e.index])
    if isinstance(e, TimeVar):
        return t
    if isinstance(e, Add):
        return eval_point(e.left, x, t) + eval_point(e.right, x, t)
    if isinstance(e, Mul):
        return eval_point(e.left, x, t) * eval_point(e.right, x, t)
    if isinstance(e, Pow):
        return eval_point(e.base, x, t) ** e.power
    if isinstance(e, Sin):
        return math.sin(eval_point(e.arg, x, t))
    if isinstance(e, Cos):
        return math.cos(eval_point(e.arg, x, t))
    raise TypeError(f"unknown node {type(e)}")


def eval_array(e: Expr, x: np.ndarray, t: np.ndarray, _memo: dict | None = None) -> np.ndarray:
    """Evaluate over columns: x is (n, m), t is (m,); returns (m,)."""
    if _memo is None:
        _memo = {}
    got = _memo.get(id(e))
    if got is not None:
        return got
    if isinstance(e, Const):
        r = np.full(x.shape[1], e.value)
    elif isinstance(e, Var):
        r = x[e.index]
    elif isinstance(e, TimeVar):
        r = np.asarray(t, dtype=float)
    elif isinstance(e, Add):
        r = eval_array(e.left, x, t, _memo) + eval_array(e.right, x, t, _memo)
    elif isinstance(e, Mul):
        r = eval_array(e.left, x, t, _memo) * eval_array(e.right, x, t, _memo)
    elif isinstance(e, Pow):
        r = eval_array(e.base, x, t, _memo) ** e.power
    elif isinstance(e, Sin):
        r = np.sin(eval_array(e.arg, x, t, _memo))
    elif isinstance(e, Cos):
        r = np.cos(eval_array(e.arg, x, t, _memo))
    else:
        raise TypeError(f"unknown node {type(e)}")
    _memo[id(e)] = r
    return r


def eval_interval(e: Expr, box: Sequence[Interval], t_iv: Interval, _memo: dict | None = None) -> Interval:
    if _memo is None:
        _memo = {}
    got = _memo.get(id(e))
    if got is not None:
        return got
    if isinstance(e, Const):
        r = Interval(e.value, e.value)
    elif isinstance(e, Var):
        r = box[e.index]
    elif isinstance(e, TimeVar):
        r = t_iv
    elif isinstance(e, Add):
        r = eval_interval(e.left, box, t_iv, _memo) + eval_interval(e.right, box, t_iv, _memo)
    elif isinstance(e, Mul):
        r = eval_interval(e.left, box, t_iv, _memo) * eval_interval(e.right, box, t_iv, _memo)
    elif isinstance(e, Pow):
        r = eval_interval(e.base, box, t_iv, _memo).power(e.power)
    elif isinstance(e, Sin):
        r = eval_interval(e.arg, box, t_iv, _memo).sin()
    elif isinstance(e, Cos):
        r = eval_interval(e.arg, box, t_iv, _memo).cos()
    else:
        raise TypeError(f"unknown node {type(e)}")
    _memo[id(e)] = r
    return r


# ---------------------------------------------------------------------------
# calculus and structure


def time_derivative(e: Expr, rhs: Sequence[Expr], _memo: dict | None = None) -> Expr:
    """d e / dt along dx/dt = rhs(x), with dt/dt = 1.

    Result trees are simplified by the factory constant folding / zero
    pruning, e.g. d(x1^2)/dt with dx1/dt = mu*x1 gives 2*mu*x1^2 shape.
    """
    if _memo is None:
        _memo = {}
    got = _memo.get(id(e))
    if got is not None:
        return got
    if isinstance(e, Const):
        r = const(0.0)
    elif isinstance(e, Var):
        r = rhs[e.index]
    elif isinstance(e, TimeVar):
        r = const(1.0)
    elif isinstance(e, Add):
        r = add(time_derivative(e.left, rhs, _memo), time_derivative(e.right, rhs, _memo))
    elif isinstance(e, Mul):
        r = add(
            mul(time_derivative(e.left, rhs, _memo), e.right),
            mul(e.left, time_derivative(e.right, rhs, _memo)),
        )
    elif isinstance(e, Pow):
        r = mul(
            mul(const(float(e.power)), int_pow(e.base, e.power - 1)),
            time_derivative(e.base, rhs, _memo),
        )
    elif isinstance(e, Sin):
        r = mul(cos_of(e.arg), time_derivative(e.arg, rhs, _memo))
    elif isinstance(e, Cos):
        r = mul(mul(const(-1.0), sin_of(e.arg)), time_derivative(e.arg, rhs, _memo))
    else:
        raise TypeError(f"unknown node {type(e)}")
    _memo[id(e)] = r
    return r


def substitute_time(e: Expr, t: float, _memo: dict | None = None) -> Expr:
    """Replace the time symbol by a constant; trig of constants folds away."""
    if _memo is None:
        _memo = {}
    got = _memo.get(id(e))
    if got is not None:
        return got
    if isinstance(e, (Const, Var)):
        r = e
    elif isinstance(e, TimeVar):
        r = const(t)
    elif isinstance(e, Add):
        r = add(substitute_time(e.left, t, _memo), substitute_time(e.right, t, _memo))
    elif isinstance(e, Mul):
        r = mul(substitute_time(e.left, t, _memo), substitute_time(e.right, t, _memo))
    elif isinstance(e, Pow):
        r = int_pow(substitute_time(e.base, t, _memo), e.power)
    elif isinstance(e, Sin):
        r = sin_of(substitute_time(e.arg, t, _memo))
    elif isinstance(e, Cos):
        r = cos_of(substitute_time(e.arg, t, _memo))
    else:
        raise TypeError(f"unknown node {type(e)}")
    _memo[id(e)] = r
    return r


def max_var_index(e: Expr) -> int:
    if isinstance(e, Var):
        return e.index
    if isinstance(e, (Add, Mul)):
        return max(max_var_index(e.left), max_var_index(e.right))
    if isinstance(e, Pow):
        return max_var_index(e.base)
    if isinstance(e, (Sin, Cos)):
        return max_var_index(e.arg)
    return -1


def contains_time(e: Expr) -> bool:
    if isinstance(e, TimeVar):
        return True
    if isinstance(e, (Add, Mul)):
        return contains_time(e.left) or contains_time(e.right)
    if isinstance(e, Pow):
        return contains_time(e.base)
    if isinstance(e, (Sin, Cos)):
        return contains_time(e.arg)
    return False


def monomial_form(e: Expr) -> tuple[float, dict[int, int], int, int] | None:
    """Decompose c * prod(x_i^e_i) * sin(t)^a * cos(t)^b, else None."""
    coeff = 1.0
    exps: dict[int, int] = {}
    sin_pow = 0
    cos_pow = 0

    def walk(node: Expr, mult: int) -> bool:
        nonlocal coeff, sin_pow, cos_pow
        if isinstance(node, Const):
            coeff *= node.value**mult
            return True
        if isinstance(node, Var):
            exps[node.index] = exps.get(node.index, 0) + mult
            return True
        if isinstance(node, Mul):
            return walk(node.left, mult) and walk(node.right, mult)
        if isinstance(node, Pow):
            return walk(node.base, mult * node.power)
        if isinstance(node, Sin) and isinstance(node.arg, TimeVar):
            sin_pow += mult
            return True
        if isinstance(node, Cos) and isinstance(node.arg, TimeVar):
            cos_pow += mult
            return True
        return False

    if not walk(e, 1):
        return None
    return coeff, exps, sin_pow, cos_pow


# ---------------------------------------------------------------------------
# canonical text form

_PREC_ADD, _PREC_MUL, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def format_expression(e: Expr) -> str:
    def rec(node: Expr, parent_prec: int) -> str:
        if isinstance(node, Const):
            s = _fmt_num(node.value)
            return f"({s})" if node.value < 0 and parent_prec > _PREC_ADD else s
        if isinstance(node, Var):
            return f"x{node.index + 1}"
        if isinstance(node, TimeVar):
            return "t"
        if isinstance(node, Add):
            s = f"{rec(node.left, _PREC_ADD)}+{rec(node.right, _PREC_ADD + 1)}"
            return f"({s})" if parent_prec > _PREC_ADD else s
        if isinstance(node, Mul):
            s = f"{rec(node.left, _PREC_MUL)}*{rec(node.right, _PREC_MUL + 1)}"
            return f"({s})" if parent_prec > _PREC_MUL else s
        if isinstance(node, Pow):
            return f"{rec(node.base, _PREC_ATOM)}^{node.power}"
        if isinstance(node, Sin):
            return f"sin({rec(node.arg, 0)})"
        if isinstance(node, Cos):
            return f"cos({rec(node.arg, 0)})"
        raise TypeError(f"unknown node {type(node)}")

    return rec(e, 0)


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>sin|cos|x\d+|t)"
    r"|(?P<sym>[-+*^()]))"
)


class ExpressionSyntaxError(ValueError):
    pass


def _tokenize(s: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(s):
        m = _TOKEN_RE.match(s, pos)
        if m is None or m.end() == pos:
            if s[pos:].strip() == "":
                break
            raise ExpressionSyntaxError(f"bad token at {s[pos:]!r}")
        pos = m.end()
        for kind in ("num", "name", "sym"):
            v = m.group(kind)
            if v is not None:
                tokens.append((kind, v))
                break
    return tokens


def parse_expression(s: str) -> Expr:
    """Parse the canonical text form back into an (interned) expression."""
    tokens = _tokenize(s)
    pos = 0

    def peek() -> tuple[str, str] | None:
        return tokens[pos] if pos < len(tokens) else None

    def take(expect: str | None = None) -> tuple[str, str]:
        nonlocal pos
        if pos >= len(tokens):
            raise ExpressionSyntaxError(f"unexpected end of input in {s!r}")
        tok = tokens[pos]
        if expect is not None and tok[1] != expect:
            raise ExpressionSyntaxError(f"expected {expect!r}, got {tok[1]!r} in {s!r}")
        pos += 1
        return tok

    def parse_sum() -> Expr:
        node = parse_product()
        while (tok := peek()) is not None and tok[1] in "+-":
            take()
            rhs = parse_product()
            node = add(node, rhs if tok[1] == "+" else mul(const(-1.0), rhs))
        return node

    def parse_product() -> Expr:
        node = parse_factor()
        while (tok := peek()) is not None and tok[1] == "*":
            take()
            node = mul(node, parse_factor())
        return node

    def parse_factor() -> Expr:
        tok = peek()
        if tok is not None and tok[1] == "-":
            take()
            return mul(const(-1.0), parse_factor())
        node = parse_atom()
        if (tok := peek()) is not None and tok[1] == "^":
            take()
            kind, v = take()
            if kind != "num" or not v.isdigit():
                raise ExpressionSyntaxError(f"power must be a non-negative integer, got {v!r}")
            node = int_pow(node, int(v))
        return node

    def parse_atom() -> Expr:
        kind, v = take()
        if kind == "num":
            return const(float(v))
        if kind == "name":
            if v == "t":
                return time_var()
            if v in ("sin", "cos"):
                take("(")
                arg = parse_sum()
                take(")")
                return sin_of(arg) if v == "sin" else cos_of(arg)
            return var(int(v[1:]) - 1)
        if v == "(":
            node = parse_sum()
            take(")")
            return node
        raise ExpressionSyntaxError(f"unexpected token {v!r} in {s!r}")

    node = parse_sum()
    if pos != len(tokens):
        raise ExpressionSyntaxError(f"trailing tokens in {s!r}")
    return node


# ---------------------------------------------------------------------------
# compilation for integrator hot loops


def compile_point_fn(exprs: Sequence[Expr]) -> Callable[[np.ndarray, float], list[float]]:
    """Compile expressions into one fast point-evaluation callable."""

    def src(node: Expr) -> str:
        if isinstance(node, Const):
            return repr(node.value)
        if isinstance(node, Var):
            return f"x[{node.index}]"
        if isinstance(node, TimeVar):
            return "t"
        if isinstance(node, Add):
            return f"({src(node.left)}+{src(node.right)})"
        if isinstance(node, Mul):
            return f"({src(node.left)}*{src(node.right)})"
        if isinstance(node, Pow):
            return f"({src(node.base)})**{node.power}"
        if isinstance(node, Sin):
            return f"_sin({src(node.arg)})"
        if isinstance(node, Cos):
            return f"_cos({src(node.arg)})"
        raise TypeError(f"unknown node {type(node)}")

    body = ",".join(src(e) for e in exprs)
    code = f"def _f(x, t, _sin=_sin, _cos=_cos):\n    return [{body}]\n"
    ns = {"_sin": math.sin, "_cos": math.cos}
    exec(code, ns)  # generated from our own AST only
    return ns["_f"]
