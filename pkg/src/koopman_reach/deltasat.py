"""Internal delta-satisfiability solver and SMT-LIB2 emission.

Systems are conjunctions of nonlinear constraints (expression trees compared
against expression trees) over finitely-bounded real variables. Solving is
branch-and-prune: HC4 forward-backward contraction over every constraint
until progress stalls, then bisection of the widest variable, depth-first
with the lower half explored first. A box whose every dimension is narrower
than delta that cannot be refuted is returned as a delta-sat witness; callers
treat it as potentially unsafe, mirroring how boundary results from a
delta-decidable solver are reported.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from decimal import Decimal
from typing import Sequence

import numpy as np

from . import expressions as ex
from .expressions import Expr
from .numerics.intervals import Interval, IntervalBox, IntervalDivisionError

__all__ = [
    "Constraint",
    "ConstraintSystem",
    "DeltaVerdict",
    "ResourceExhausted",
    "build_system",
    "hc4_contract",
    "solve",
    "emit_smtlib",
    "DEFAULT_DELTA",
    "DEFAULT_MAX_BOXES",
]

DEFAULT_DELTA = 1e-4
DEFAULT_MAX_BOXES = 1_000_000
_HC4_REL_TOL = 0.01
_HC4_MAX_SWEEPS = 100


class ResourceExhausted(RuntimeError):
    """The search exceeded its box budget or wall-clock allowance."""


@dataclass(frozen=True)
class Constraint:
    lhs: Expr
    op: str  # "<=" or "=="
    rhs: Expr

    def __post_init__(self) -> None:
        if self.op not in ("<=", "=="):
            raise ValueError(f"unsupported relation {self.op!r}")
        if ex.contains_time(self.lhs) or ex.contains_time(self.rhs):
            raise ValueError("constraints must not mention the time symbol; substitute it first")
        # residual tree lhs - rhs, compared against 0
        object.__setattr__(self, "_diff", ex.add(self.lhs, ex.mul(ex.const(-1.0), self.rhs)))

    def residual(self, x: Sequence[float]) -> float:
        """Violation at a point: 0 when satisfied (with equality slack for ==)."""
        v = ex.eval_point(self._diff, x)
        return abs(v) if self.op == "==" else max(0.0, v)


@dataclass(frozen=True)
class ConstraintSystem:
    var_names: tuple[str, ...]
    bounds: IntervalBox
    constraints: tuple[Constraint, ...]

    def __post_init__(self) -> None:
        if len(self.var_names) != len(self.bounds):
            raise ValueError("one bound interval per variable is required")
        n = len(self.var_names)
        for c in self.constraints:
            if max(ex.max_var_index(c.lhs), ex.max_var_index(c.rhs)) >= n:
                raise ValueError(f"constraint {c} references undeclared variables")

    @property
    def dim(self) -> int:
        return len(self.var_names)

    def residuals(self, x: Sequence[float]) -> list[float]:
        return [c.residual(x) for c in self.constraints]


@dataclass(frozen=True)
class DeltaVerdict:
    kind: str  # "delta_sat" | "unsat"
    witness: IntervalBox | None
    delta: float
    boxes_processed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("delta_sat", "unsat"):
            raise ValueError(f"unknown verdict kind {self.kind!r}")
        if (self.kind == "delta_sat") != (self.witness is not None):
            raise ValueError("delta_sat verdicts carry a witness, unsat verdicts do not")


# ---------------------------------------------------------------------------
# HC4 contraction


class _Infeasible(Exception):
    pass


def _forward(e: Expr, bounds: list[Interval], memo: dict) -> Interval:
    got = memo.get(id(e))
    if got is not None:
        return got
    if isinstance(e, ex.Const):
        r = Interval(e.value, e.value)
    elif isinstance(e, ex.Var):
        r = bounds[e.index]
    elif isinstance(e, ex.Add):
        r = _forward(e.left, bounds, memo) + _forward(e.right, bounds, memo)
    elif isinstance(e, ex.Mul):
        r = _forward(e.left, bounds, memo) * _forward(e.right, bounds, memo)
    elif isinstance(e, ex.Pow):
        r = _forward(e.base, bounds, memo).power(e.power)
    elif isinstance(e, ex.Sin):
        r = _forward(e.arg, bounds, memo).sin()
    elif isinstance(e, ex.Cos):
        r = _forward(e.arg, bounds, memo).cos()
    else:
        raise TypeError(f"unknown node {type(e)}")
    memo[id(e)] = r
    return r


_PAD = 1e-14  # absolute outward padding for transcendental inversions


def _backward(e: Expr, allowed: Interval, bounds: list[Interval], memo: dict) -> None:
    fwd = memo[id(e)]
    cap = fwd.intersect(allowed)
    if cap is None:
        raise _Infeasible
    if isinstance(e, ex.Const):
        return
    if isinstance(e, ex.Var):
        new = bounds[e.index].intersect(cap)
        if new is None:
            raise _Infeasible
        bounds[e.index] = new
        return
    if isinstance(e, ex.Add):
        fl, fr = memo[id(e.left)], memo[id(e.right)]
        _backward(e.left, cap - fr, bounds, memo)
        _backward(e.right, cap - fl, bounds, memo)
        return
    if isinstance(e, ex.Mul):
        fl, fr = memo[id(e.left)], memo[id(e.right)]
        try:
            _backward(e.left, cap / fr, bounds, memo)
        except IntervalDivisionError:
            pass
        try:
            _backward(e.right, cap / fl, bounds, memo)
        except IntervalDivisionError:
            pass
        return
    if isinstance(e, ex.Pow):
        _backward_pow(e, cap, bounds, memo)
        return
    if isinstance(e, (ex.Sin, ex.Cos)):
        _backward_trig(e, cap, bounds, memo)
        return
    raise TypeError(f"unknown node {type(e)}")


def _backward_pow(e: ex.Pow, cap: Interval, bounds: list[Interval], memo: dict) -> None:
    k = e.power
    base_fwd = memo[id(e.base)]
    if k % 2 == 1:
        lo = math.copysign(abs(cap.lo) ** (1.0 / k), cap.lo)
        hi = math.copysign(abs(cap.hi) ** (1.0 / k), cap.hi)
        pre = Interval(lo - abs(lo) * 1e-14 - _PAD, hi + abs(hi) * 1e-14 + _PAD)
    else:
        if cap.hi < 0.0:
            raise _Infeasible
        hi_r = cap.hi ** (1.0 / k) * (1 + 1e-14) + _PAD
        lo_r = max(cap.lo, 0.0) ** (1.0 / k) * (1 - 1e-14)
        if base_fwd.lo >= 0.0:
            pre = Interval(lo_r - _PAD, hi_r)
        elif base_fwd.hi <= 0.0:
            pre = Interval(-hi_r, -lo_r + _PAD)
        else:
            pre = Interval(-hi_r, hi_r)
    _backward(e.base, pre, bounds, memo)


def _backward_trig(e, cap: Interval, bounds: list[Interval], memo: dict) -> None:
    """Invert sin/cos only when the argument sits inside one monotone branch."""
    is_sin = isinstance(e, ex.Sin)
    arg = memo[id(e.arg)]
    lo_c = max(cap.lo, -1.0)
    hi_c = min(cap.hi, 1.0)
    if lo_c > hi_c:
        raise _Infeasible
    if is_sin:
        # monotone on [-pi/2 + j*pi, pi/2 + j*pi]
        j = math.floor((arg.lo + math.pi / 2) / math.pi)
        branch_lo = -math.pi / 2 + j * math.pi
        branch_hi = branch_lo + math.pi
        if arg.hi > branch_hi:
            return  # spans a fold: no tightening
        a = math.asin(lo_c)
        b = math.asin(hi_c)
        if j % 2 == 0:  # increasing branch
            pre = Interval(branch_lo + (a + math.pi / 2), branch_lo + (b + math.pi / 2))
        else:
            pre = Interval(branch_lo + (math.pi / 2 - b), branch_lo + (math.pi / 2 - a))
    else:
        # cos monotone on [j*pi, (j+1)*pi]
        j = math.floor(arg.lo / math.pi)
        branch_lo = j * math.pi
        branch_hi = branch_lo + math.pi
        if arg.hi > branch_hi:
            return
        a = math.acos(hi_c)
        b = math.acos(lo_c)
        if j % 2 == 0:
            pre = Interval(branch_lo + a, branch_lo + b)
        else:
            pre = Interval(branch_lo + (math.pi - b), branch_lo + (math.pi - a))
    pre = Interval(pre.lo - 1e-12, pre.hi + 1e-12)
    _backward(e.arg, pre, bounds, memo)


def _revise(c: Constraint, bounds: list[Interval]) -> None:
    memo: dict = {}
    diff = c._diff
    fwd = _forward(diff, bounds, memo)
    if c.op == "<=":
        if fwd.lo > 0.0:
            raise _Infeasible
        allowed = Interval(fwd.lo, min(fwd.hi, 0.0))
    else:
        if not fwd.contains(0.0):
            raise _Infeasible
        allowed = Interval(0.0, 0.0)
    _backward(diff, allowed, bounds, memo)


def hc4_contract(system: ConstraintSystem, box: IntervalBox) -> IntervalBox | None:
    """Sound contraction of the box; None when some constraint is infeasible."""
    bounds = list(box.intervals())
    try:
        for _ in range(_HC4_MAX_SWEEPS):
            before = [b.width for b in bounds]
            for c in system.constraints:
                _revise(c, bounds)
            progress = 0.0
            for w0, b in zip(before, bounds):
                if w0 > 0:
                    progress = max(progress, (w0 - b.width) / w0)
            if progress <= _HC4_REL_TOL:
                break
    except _Infeasible:
        return None
    return IntervalBox.from_intervals(bounds)


def solve(
    system: ConstraintSystem,
    delta: float = DEFAULT_DELTA,
    max_boxes: int = DEFAULT_MAX_BOXES,
    timeout: float | None = None,
) -> DeltaVerdict:
    """Branch-and-prune search; deterministic for fixed inputs."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    deadline = None if timeout is None else time.monotonic() + timeout
    stack = [system.bounds]
    processed = 0
    while stack:
        box = stack.pop()
        processed += 1
        if processed > max_boxes:
            raise ResourceExhausted(f"box budget {max_boxes} exhausted")
        if deadline is not None and time.monotonic() > deadline:
            raise ResourceExhausted(f"timeout after {processed} boxes")
        contracted = hc4_contract(system, box)
        if contracted is None:
            continue
        widths = contracted.widths
        if (widths <= delta).all():
            return DeltaVerdict("delta_sat", contracted, delta, processed)
        dim = int(np.argmax(widths))
        lower, upper = contracted.split(dim)
        stack.append(upper)
        stack.append(lower)  # popped first: lowest branch explored first
    return DeltaVerdict("unsat", None, delta, processed)


# ---------------------------------------------------------------------------
# system construction from a fitted model


def build_system(model, init, unsafe, step_index: int, extra_linear=()) -> ConstraintSystem:
    """Constraints for 'some x0 in I reaches U at step i' over the fitted model.

    The step map and state recovery are substituted symbolically, so the free
    variables are exactly the n initial states; each unsafe half-space becomes
    one nonlinear constraint sum_j w_j g_j(x0) <= r with w the pulled-back
    normal. Time-dependent observables are evaluated at t = 0 (lift time of
    the initial snapshot), which folds them to constants. `extra_linear`
    carries initial-polytope constraints when `init` is a contracted box.
    """
    from .koopman import KoopmanModel
    from .sets import HalfSpace, UnsafeSet, box_from_halfspaces, lift_unsafe

    assert isinstance(model, KoopmanModel)
    if step_index < 0:
        raise ValueError("step index must be non-negative")
    d = model.dictionary
    n = d.state_dim

    linear_init: list[HalfSpace] = list(extra_linear)
    if isinstance(init, IntervalBox):
        bounds = init
    else:
        linear_init += list(init)
        bounds = box_from_halfspaces(list(init), n)

    exprs_t0 = [ex.substitute_time(g, 0.0) for g in d.exprs]
    k_i = model.step_operator(step_index)

    constraints: list[Constraint] = []
    for hs in lift_unsafe(unsafe, d.size):
        w = k_i.T @ hs.normal
        const_part = 0.0
        terms: list[Expr] = []
        for wj, gj in zip(w, exprs_t0):
            if wj == 0.0:
                continue
            if isinstance(gj, ex.Const):
                const_part += wj * gj.value
            else:
                terms.append(ex.mul(ex.const(float(wj)), gj))
        lhs = _balanced_sum(terms)
        constraints.append(Constraint(lhs, "<=", ex.const(hs.offset - const_part)))
    for hs in linear_init:
        terms = [
            ex.mul(ex.const(float(c)), ex.var(i)) for i, c in enumerate(hs.normal) if c != 0.0
        ]
        constraints.append(Constraint(_balanced_sum(terms), "<=", ex.const(hs.offset)))

    names = tuple(f"x{i}" for i in range(n))
    return ConstraintSystem(var_names=names, bounds=bounds, constraints=tuple(constraints))


def _balanced_sum(terms: list[Expr]) -> Expr:
    if not terms:
        return ex.const(0.0)
    while len(terms) > 1:
        nxt = [ex.add(terms[i], terms[i + 1]) for i in range(0, len(terms) - 1, 2)]
        if len(terms) % 2 == 1:
            nxt.append(terms[-1])
        terms = nxt
    return terms[0]


# ---------------------------------------------------------------------------
# SMT-LIB2 emission


def _smt_num(x: float) -> str:
    if x < 0:
        return f"(- {_smt_num(-x)})"
    s = format(Decimal(x), "f")
    if "." not in s:
        s += ".0"
    return s


def _smt_expr(e: Expr, names: Sequence[str]) -> str:
    if isinstance(e, ex.Const):
        return _smt_num(e.value)
    if isinstance(e, ex.Var):
        return names[e.index]
    if isinstance(e, ex.Add):
        return f"(+ {_smt_expr(e.left, names)} {_smt_expr(e.right, names)})"
    if isinstance(e, ex.Mul):
        return f"(* {_smt_expr(e.left, names)} {_smt_expr(e.right, names)})"
    if isinstance(e, ex.Pow):
        base = _smt_expr(e.base, names)
        return f"(* {' '.join([base] * e.power)})"
    if isinstance(e, ex.Sin):
        return f"(sin {_smt_expr(e.arg, names)})"
    if isinstance(e, ex.Cos):
        return f"(cos {_smt_expr(e.arg, names)})"
    raise TypeError(f"cannot emit node {type(e)}")


def emit_smtlib(system: ConstraintSystem, delta: float = DEFAULT_DELTA) -> str:
    """Byte-deterministic QF_NRA text for the system (dReal-style sin/cos)."""
    lines = [
        "(set-logic QF_NRA)",
        f"(set-info :precision {_smt_num(delta)})",
    ]
    names = system.var_names
    for name in names:
        lines.append(f"(declare-fun {name} () Real)")
    for name, iv in zip(names, system.bounds.intervals()):
        lines.append(f"(assert (<= {_smt_num(iv.lo)} {name}))")
        lines.append(f"(assert (<= {name} {_smt_num(iv.hi)}))")
    for c in system.constraints:
        op = "<=" if c.op == "<=" else "="
        lines.append(f"(assert ({op} {_smt_expr(c.lhs, names)} {_smt_expr(c.rhs, names)}))")
    lines.append("(check-sat)")
    lines.append("(exit)")
    return "\n".join(lines) + "\n"
