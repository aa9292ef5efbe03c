"""Observable dictionaries: construction, lifting, symbolic differentiation.

A dictionary is an ordered tuple of expressions over the state and the time
symbol, whose first n entries are the identity observables x1..xn (so state
recovery from the lift is a coordinate selection). Entry order is canonical
and documented so fitted operators are reproducible run to run:

  1. identity observables x1..xn;
  2. remaining monomials of total degree <= d, graded-lexicographic
     (by degree, then descending exponent tuples), including the constant 1;
  3. for each trig pair (a, b) != (0, 0) in lexicographic order, every
     monomial of degree <= d multiplied by sin(t)^a * cos(t)^b.

Monomial-only dictionaries (everything the builder emits) get a vectorized
table path for lifting; hand-built expressions fall back to tree evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

from . import expressions as ex
from .expressions import Expr
from .numerics.intervals import Interval, IntervalBox

__all__ = [
    "Dictionary",
    "build_dictionary",
    "identity_dictionary",
    "lift_point",
    "lift_box",
    "lift_columns",
    "differentiate_along",
]


def _monomial_exponents(n: int, max_degree: int) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []
    for deg in range(max_degree + 1):
        level: list[tuple[int, ...]] = []
        for combo in combinations_with_replacement(range(n), deg):
            e = [0] * n
            for i in combo:
                e[i] += 1
            level.append(tuple(e))
        level.sort(reverse=True)  # descending lex within a degree
        out.extend(level)
    return out


def _monomial_expr(exps: tuple[int, ...], sin_pow: int = 0, cos_pow: int = 0) -> Expr:
    factors = [ex.int_pow(ex.var(i), p) for i, p in enumerate(exps) if p > 0]
    if sin_pow > 0:
        factors.append(ex.int_pow(ex.sin_of(ex.time_var()), sin_pow))
    if cos_pow > 0:
        factors.append(ex.int_pow(ex.cos_of(ex.time_var()), cos_pow))
    return ex.product_of(factors)


@dataclass(frozen=True)
class Dictionary:
    """Ordered observable dictionary g: R^n (x time) -> R^k."""

    exprs: tuple[Expr, ...]
    state_dim: int
    _table: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        n = self.state_dim
        if len(self.exprs) < n:
            raise ValueError("dictionary must contain at least the identity observables")
        for i in range(n):
            e = self.exprs[i]
            if not (isinstance(e, ex.Var) and e.index == i):
                raise ValueError(f"entry {i} must be the identity observable x{i + 1}")
        if len(set(map(id, self.exprs))) != len(self.exprs):
            raise ValueError("dictionary entries must be structurally distinct")
        for e in self.exprs:
            if ex.max_var_index(e) >= n:
                raise ValueError(f"expression {e!r} references variables beyond x{n}")
        object.__setattr__(self, "_table", self._build_table())

    def _build_table(self):
        k, n = len(self.exprs), self.state_dim
        exps = np.zeros((k, n), dtype=np.int64)
        trig = np.zeros((k, 2), dtype=np.int64)
        coeff = np.ones(k)
        for j, e in enumerate(self.exprs):
            m = ex.monomial_form(e)
            if m is None:
                return None
            c, powers, sp, cp = m
            coeff[j] = c
            trig[j] = (sp, cp)
            for i, p in powers.items():
                exps[j, i] = p
        return exps, trig, coeff

    @property
    def size(self) -> int:
        return len(self.exprs)

    @property
    def is_monomial(self) -> bool:
        return self._table is not None

    def uses_time(self) -> bool:
        return any(ex.contains_time(e) for e in self.exprs)

    def to_strings(self) -> list[str]:
        return [ex.format_expression(e) for e in self.exprs]

    @staticmethod
    def from_strings(strings: Sequence[str], state_dim: int) -> "Dictionary":
        return Dictionary(tuple(ex.parse_expression(s) for s in strings), state_dim)

    def projection(self) -> np.ndarray:
        """The n x k state-recovery matrix (rows of the identity)."""
        m = np.zeros((self.state_dim, self.size))
        m[np.arange(self.state_dim), np.arange(self.state_dim)] = 1.0
        return m


def identity_dictionary(state_dim: int) -> Dictionary:
    return Dictionary(tuple(ex.var(i) for i in range(state_dim)), state_dim)


def build_dictionary(
    state_dim: int,
    max_poly_degree: int,
    a_max: int = 0,
    b_max: int = 0,
) -> Dictionary:
    if max_poly_degree < 1:
        raise ValueError("max_poly_degree must be >= 1")
    n = state_dim
    monos = _monomial_exponents(n, max_poly_degree)
    identity = {tuple(int(i == j) for j in range(n)) for i in range(n)}

    exprs: list[Expr] = [ex.var(i) for i in range(n)]
    exprs.extend(_monomial_expr(e) for e in monos if e not in identity)
    for a in range(a_max + 1):
        for b in range(b_max + 1):
            if a == 0 and b == 0:
                continue
            exprs.extend(_monomial_expr(e, a, b) for e in monos)
    return Dictionary(tuple(exprs), n)


def lift_point(d: Dictionary, x: np.ndarray, t: float = 0.0) -> np.ndarray:
    """g(x, t); the first n outputs equal x bit-for-bit."""
    x = np.asarray(x, dtype=float)
    if x.shape != (d.state_dim,):
        raise ValueError(f"point has wrong dimension {x.shape}, expected ({d.state_dim},)")
    if d.is_monomial:
        exps, trig, coeff = d._table
        out = coeff.copy()
        for i in range(d.state_dim):
            p = exps[:, i]
            np.multiply(out, x[i] ** p, where=p > 0, out=out)
        if trig.any():
            st, ct = np.sin(t), np.cos(t)
            np.multiply(out, st ** trig[:, 0], where=trig[:, 0] > 0, out=out)
            np.multiply(out, ct ** trig[:, 1], where=trig[:, 1] > 0, out=out)
        out[: d.state_dim] = x  # selection, exact by construction
        return out
    return np.array([ex.eval_point(e, x, t) for e in d.exprs])


def lift_columns(d: Dictionary, x: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Columnwise lift: x is (n, m), times (m,); returns G of shape (k, m)."""
    x = np.asarray(x, dtype=float)
    times = np.asarray(times, dtype=float)
    n, m = x.shape
    if n != d.state_dim or times.shape != (m,):
        raise ValueError("snapshot matrix / time vector shapes do not match")
    g = np.empty((d.size, m))
    if d.is_monomial:
        exps, trig, coeff = d._table
        st, ct = np.sin(times), np.cos(times)
        for j in range(d.size):
            row = np.full(m, coeff[j])
            for i in range(n):
                if exps[j, i] > 0:
                    row = row * x[i] ** int(exps[j, i])
            if trig[j, 0] > 0:
                row = row * st ** int(trig[j, 0])
            if trig[j, 1] > 0:
                row = row * ct ** int(trig[j, 1])
            g[j] = row
        g[: d.state_dim] = x
        return g
    for j, e in enumerate(d.exprs):
        g[j] = ex.eval_array(e, x, times)
    return g


def _vec_mul(cur_lo, cur_hi, new_lo, new_hi, active):
    """Vectorized interval product on active rows, one-ULP outward."""
    p1 = cur_lo * new_lo
    p2 = cur_lo * new_hi
    p3 = cur_hi * new_lo
    p4 = cur_hi * new_hi
    lo = np.nextafter(np.minimum(np.minimum(p1, p2), np.minimum(p3, p4)), -np.inf)
    hi = np.nextafter(np.maximum(np.maximum(p1, p2), np.maximum(p3, p4)), np.inf)
    return np.where(active, lo, cur_lo), np.where(active, hi, cur_hi)


def lift_box(d: Dictionary, box: IntervalBox, t_iv: Interval | None = None) -> IntervalBox:
    """Conservative image of the box (and time range) under every observable."""
    if len(box) != d.state_dim:
        raise ValueError("box dimension does not match the dictionary state dimension")
    if t_iv is None:
        t_iv = Interval(0.0, 0.0)
    if not d.is_monomial:
        ivs = [ex.eval_interval(e, box.intervals(), t_iv) for e in d.exprs]
        return IntervalBox.from_intervals(ivs)

    exps, trig, coeff = d._table
    k, n = exps.shape
    # power tables per dimension, parity-aware and tight (scalar kernel)
    max_p = int(exps.max(initial=0))
    pow_lo = np.empty((n, max_p + 1))
    pow_hi = np.empty((n, max_p + 1))
    for i in range(n):
        iv = box[i]
        for p in range(max_p + 1):
            r = iv.power(p)
            pow_lo[i, p], pow_hi[i, p] = r.lo, r.hi

    cur_lo = np.where(coeff == 1.0, 1.0, coeff)
    cur_hi = cur_lo.copy()
    started = coeff != 1.0
    for i in range(n):
        p = exps[:, i]
        act = p > 0
        if not act.any():
            continue
        sel_lo = pow_lo[i, p]
        sel_hi = pow_hi[i, p]
        fresh = act & ~started
        cur_lo = np.where(fresh, sel_lo, cur_lo)
        cur_hi = np.where(fresh, sel_hi, cur_hi)
        cont = act & started
        if cont.any():
            cur_lo, cur_hi = _vec_mul(cur_lo, cur_hi, sel_lo, sel_hi, cont)
        started = started | act

    if trig.any():
        sin_iv = t_iv.sin()
        cos_iv = t_iv.cos()
        max_a = int(trig[:, 0].max())
        max_b = int(trig[:, 1].max())
        sin_tab = [(sin_iv.power(a).lo, sin_iv.power(a).hi) for a in range(max_a + 1)]
        cos_tab = [(cos_iv.power(b).lo, cos_iv.power(b).hi) for b in range(max_b + 1)]
        for tab, col in ((sin_tab, 0), (cos_tab, 1)):
            p = trig[:, col]
            act = p > 0
            if not act.any():
                continue
            sel_lo = np.array([tab[q][0] for q in p])
            sel_hi = np.array([tab[q][1] for q in p])
            fresh = act & ~started
            cur_lo = np.where(fresh, sel_lo, cur_lo)
            cur_hi = np.where(fresh, sel_hi, cur_hi)
            cont = act & started
            if cont.any():
                cur_lo, cur_hi = _vec_mul(cur_lo, cur_hi, sel_lo, sel_hi, cont)
            started = started | act

    # identity coordinates are a selection: keep them exactly
    cur_lo[: d.state_dim] = box.los[: d.state_dim]
    cur_hi[: d.state_dim] = box.his[: d.state_dim]
    return IntervalBox(cur_lo, cur_hi)


def differentiate_along(d: Dictionary, rhs: Sequence[Expr]) -> tuple[Expr, ...]:
    """d g_j/dt = grad(g_j) . f(x) + partial g_j / partial t, simplified."""
    if len(rhs) != d.state_dim:
        raise ValueError("vector field dimension does not match the dictionary")
    memo: dict = {}
    return tuple(ex.time_derivative(e, rhs, memo) for e in d.exprs)
