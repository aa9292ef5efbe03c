"""Dense two-phase simplex for small H-polytopes.

Solves min c^T x subject to A x <= b with free x, via the split
x = u - v, u, v >= 0 plus slacks. Bland's rule is used throughout, so the
method cannot cycle. Intended scale is tens of constraints, not thousands.
"""

from __future__ import annotations

import math

import numpy as np

from .intervals import Interval

__all__ = ["InfeasiblePolytope", "UnboundedDirection", "linear_minimize", "bound_variable"]

_TOL = 1e-11


class InfeasiblePolytope(ValueError):
    """The constraint system A x <= b has no solution."""


class UnboundedDirection(ValueError):
    """The objective is unbounded below over the polytope."""


def _pivot(t: np.ndarray, basis: list[int], row: int, col: int) -> None:
    t[row, :] /= t[row, col]
    for i in range(t.shape[0]):
        if i != row and t[i, col] != 0.0:
            t[i, :] -= t[i, col] * t[row, :]
    basis[row] = col


def _run_simplex(t: np.ndarray, basis: list[int], n_cols: int) -> None:
    """Minimize the objective row in place; columns >= n_cols never enter."""
    m = t.shape[0] - 1
    while True:
        enter = -1
        for j in range(n_cols):
            if t[m, j] < -_TOL:
                enter = j
                break
        if enter < 0:
            return
        leave = -1
        best = math.inf
        for i in range(m):
            a = t[i, enter]
            if a > _TOL:
                r = t[i, -1] / a
                if r < best - _TOL or (abs(r - best) <= _TOL and (leave < 0 or basis[i] < basis[leave])):
                    best = r
                    leave = i
        if leave < 0:
            raise UnboundedDirection("no blocking constraint for entering column")
        _pivot(t, basis, leave, enter)


def linear_minimize(c: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Return (x*, c^T x*) minimizing over {x : a x <= b}."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = a.shape

    # columns: u (n) | v (n) | slacks (m) | artificials (appended as needed)
    sign = np.where(b < 0.0, -1.0, 1.0)
    eq = np.hstack([a, -a, np.eye(m)]) * sign[:, None]
    rhs = b * sign
    n_real = 2 * n + m

    basis: list[int] = []
    art_cols: list[int] = []
    blocks = [eq]
    for i in range(m):
        if sign[i] > 0:
            basis.append(2 * n + i)  # slack enters the basis directly
        else:
            col = np.zeros((m, 1))
            col[i, 0] = 1.0
            blocks.append(col)
            j = n_real + len(art_cols)
            art_cols.append(j)
            basis.append(j)
    eq = np.hstack(blocks)
    n_total = eq.shape[1]

    t = np.zeros((m + 1, n_total + 1))
    t[:m, :n_total] = eq
    t[:m, -1] = rhs

    if art_cols:
        t[m, art_cols] = 1.0
        for i, j in enumerate(basis):
            if t[m, j] != 0.0:
                t[m, :] -= t[m, j] * t[i, :]
        _run_simplex(t, basis, n_real)  # artificials may leave but never re-enter
        if -t[m, -1] > 1e-8:
            raise InfeasiblePolytope("phase-1 optimum is positive")
        for i in range(m):  # drive any degenerate artificial out of the basis
            if basis[i] in art_cols:
                for j in range(n_real):
                    if abs(t[i, j]) > _TOL:
                        _pivot(t, basis, i, j)
                        break

    t[m, :] = 0.0
    t[m, :n] = c
    t[m, n : 2 * n] = -c
    for i, j in enumerate(basis):
        if t[m, j] != 0.0:
            t[m, :] -= t[m, j] * t[i, :]
    _run_simplex(t, basis, n_real)

    x = np.zeros(n)
    for i, j in enumerate(basis):
        if j < n:
            x[j] += t[i, -1]
        elif j < 2 * n:
            x[j - n] -= t[i, -1]
    return x, float(c @ x)


def bound_variable(a: np.ndarray, b: np.ndarray, index: int) -> Interval:
    """Tight bounds [min x_index, max x_index] over {x : a x <= b} via two LPs."""
    n = np.atleast_2d(a).shape[1]
    c = np.zeros(n)
    c[index] = 1.0
    _, lo = linear_minimize(c, a, b)
    _, neg_hi = linear_minimize(-c, a, b)
    return Interval(min(lo, -neg_hi), -neg_hi)
