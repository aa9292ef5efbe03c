"""Closed-interval arithmetic with outward rounding.

Endpoints are widened by one ULP only when the underlying float operation
actually rounded; exactness is detected with error-free transformations
(2Sum for additions, Dekker's product for multiplications), so results such
as [1,2]+[3,4] = [4,6] stay tight while soundness is preserved without
touching the FPU rounding mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Interval",
    "IntervalBox",
    "IntervalDivisionError",
]

_INF = math.inf
_SPLITTER = 134217729.0  # 2**27 + 1, Veltkamp splitting constant


class IntervalDivisionError(ZeroDivisionError):
    """Divisor interval contains zero; the quotient is not a single interval."""


def _down(x: float) -> float:
    return math.nextafter(x, -_INF)


def _up(x: float) -> float:
    return math.nextafter(x, _INF)


def _two_sum(a: float, b: float) -> tuple[float, float]:
    """Return (s, e) with a + b = s + e exactly and s = fl(a + b)."""
    s = a + b
    bp = s - a
    return s, (a - (s - bp)) + (b - bp)


def _two_prod(a: float, b: float) -> tuple[float, float]:
    """Return (p, e) with a * b = p + e exactly and p = fl(a * b)."""
    p = a * b
    if not math.isfinite(p):
        return p, _INF  # overflow: treat as inexact in both directions
    ah = _SPLITTER * a
    ah = ah - (ah - a)
    al = a - ah
    bh = _SPLITTER * b
    bh = bh - (bh - b)
    bl = b - bh
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def _sum_lo(a: float, b: float) -> float:
    s, e = _two_sum(a, b)
    return _down(s) if e < 0 else s


def _sum_hi(a: float, b: float) -> float:
    s, e = _two_sum(a, b)
    return _up(s) if e > 0 else s


def _prod_lo(a: float, b: float) -> float:
    p, e = _two_prod(a, b)
    return _down(p) if e < 0 else p


def _prod_hi(a: float, b: float) -> float:
    p, e = _two_prod(a, b)
    return _up(p) if e > 0 else p


def _quot_cmp(x: float, y: float, q: float) -> int:
    """Sign of (x/y - q), exact (rational comparison)."""
    d = Fraction(x) - Fraction(q) * Fraction(y)
    if d == 0:
        return 0
    return 1 if (d > 0) == (y > 0) else -1


def _quot_lo(x: float, y: float) -> float:
    q = x / y
    return _down(q) if _quot_cmp(x, y, q) < 0 else q


def _quot_hi(x: float, y: float) -> float:
    q = x / y
    return _up(q) if _quot_cmp(x, y, q) > 0 else q


def _pow_lo(x: float, k: int) -> float:
    """Lower bound of x^k for x >= 0 via downward-rounded repeated products."""
    r = x
    for _ in range(k - 1):
        r = _prod_lo(r, x)
    return r


def _pow_hi(x: float, k: int) -> float:
    r = x
    for _ in range(k - 1):
        r = _prod_hi(r, x)
    return r


# Quadrant bookkeeping for sin/cos: half-period in floats, rounded both ways.
_HALF_PI = math.pi / 2.0


def _crosses(lo: float, hi: float, phase: float) -> bool:
    """Conservatively: does [lo,hi] contain a point == phase (mod 2*pi)?

    Errs on the side of True (including an extremum is always sound).
    """
    two_pi = 2.0 * math.pi
    k_min = math.ceil((lo - phase) / two_pi - 1e-9)
    k_max = math.floor((hi - phase) / two_pi + 1e-9)
    return k_min <= k_max


@dataclass(frozen=True, slots=True)
class Interval:
    """Closed interval [lo, hi] of finite reals."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"interval endpoints must be finite: [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ValueError(f"interval endpoints out of order: [{self.lo}, {self.hi}]")

    @staticmethod
    def point(x: float) -> "Interval":
        return Interval(x, x)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def __iter__(self):
        yield self.lo
        yield self.hi

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def encloses(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def intersect(self, other: "Interval") -> "Interval | None":
        lo = max(self.lo, other.lo)
        hi = min(self.hi, other.hi)
        return Interval(lo, hi) if lo <= hi else None

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __add__(self, other: "Interval") -> "Interval":
        return Interval(_sum_lo(self.lo, other.lo), _sum_hi(self.hi, other.hi))

    def __sub__(self, other: "Interval") -> "Interval":
        return Interval(_sum_lo(self.lo, -other.hi), _sum_hi(self.hi, -other.lo))

    def __mul__(self, other: "Interval") -> "Interval":
        pairs = (
            (self.lo, other.lo),
            (self.lo, other.hi),
            (self.hi, other.lo),
            (self.hi, other.hi),
        )
        return Interval(
            min(_prod_lo(a, b) for a, b in pairs),
            max(_prod_hi(a, b) for a, b in pairs),
        )

    def __truediv__(self, other: "Interval") -> "Interval":
        if other.lo <= 0.0 <= other.hi:
            raise IntervalDivisionError(f"divisor {other} contains zero")
        pairs = (
            (self.lo, other.lo),
            (self.lo, other.hi),
            (self.hi, other.lo),
            (self.hi, other.hi),
        )
        return Interval(
            min(_quot_lo(a, b) for a, b in pairs),
            max(_quot_hi(a, b) for a, b in pairs),
        )

    def scaled(self, c: float) -> "Interval":
        """c * self for a scalar c."""
        if c >= 0:
            return Interval(_prod_lo(c, self.lo), _prod_hi(c, self.hi))
        return Interval(_prod_lo(c, self.hi), _prod_hi(c, self.lo))

    def shifted(self, c: float) -> "Interval":
        return Interval(_sum_lo(self.lo, c), _sum_hi(self.hi, c))

    def power(self, k: int) -> "Interval":
        """Parity-aware integer power, k >= 0."""
        if k < 0:
            raise ValueError("negative powers are not supported")
        if k == 0:
            return Interval(1.0, 1.0)
        if k == 1:
            return self
        lo, hi = self.lo, self.hi
        if lo >= 0.0:
            return Interval(_pow_lo(lo, k), _pow_hi(hi, k))
        if hi <= 0.0:
            if k % 2 == 0:
                return Interval(_pow_lo(-hi, k), _pow_hi(-lo, k))
            return Interval(-_pow_hi(-lo, k), -_pow_lo(-hi, k))
        if k % 2 == 0:  # even power of a sign-spanning interval
            return Interval(0.0, _pow_hi(max(-lo, hi), k))
        return Interval(-_pow_hi(-lo, k), _pow_hi(hi, k))

    def exp(self) -> "Interval":
        lo = 1.0 if self.lo == 0.0 else _down(math.exp(self.lo))
        hi = 1.0 if self.hi == 0.0 else _up(math.exp(self.hi))
        return Interval(lo, hi)

    def _trig(self, fn, phase_max: float, phase_min: float) -> "Interval":
        if self.width >= 2.0 * math.pi:
            return Interval(-1.0, 1.0)
        vals = []
        for x in (self.lo, self.hi):
            v = fn(x)
            if x == 0.0:  # sin(0) = 0, cos(0) = 1 are exact
                vals.append((v, v))
                continue
            vals.append((max(-1.0, _down(v)), min(1.0, _up(v))))
        lo = min(v[0] for v in vals)
        hi = max(v[1] for v in vals)
        if _crosses(self.lo, self.hi, phase_max):
            hi = 1.0
        if _crosses(self.lo, self.hi, phase_min):
            lo = -1.0
        return Interval(lo, hi)

    def sin(self) -> "Interval":
        if self.lo == 0.0 and self.hi == 0.0:
            return Interval(0.0, 0.0)
        return self._trig(math.sin, _HALF_PI, -_HALF_PI)

    def cos(self) -> "Interval":
        if self.lo == 0.0 and self.hi == 0.0:
            return Interval(1.0, 1.0)
        return self._trig(math.cos, 0.0, math.pi)

    def __repr__(self) -> str:
        return f"[{self.lo}, {self.hi}]"


class IntervalBox:
    """Axis-aligned box: a fixed-length product of intervals.

    Backed by a pair of read-only float arrays so the geometric hot paths
    (contraction sweeps, support evaluation) stay vectorized.
    """

    __slots__ = ("los", "his")

    def __init__(self, los: np.ndarray, his: np.ndarray):
        los = np.asarray(los, dtype=float)
        his = np.asarray(his, dtype=float)
        if los.ndim != 1 or los.shape != his.shape or los.size < 1:
            raise ValueError("box bounds must be 1-D arrays of equal positive length")
        if not (np.isfinite(los).all() and np.isfinite(his).all()):
            raise ValueError("box bounds must be finite")
        if (los > his).any():
            raise ValueError("box has lo > hi in some dimension")
        los = los.copy()
        his = his.copy()
        los.setflags(write=False)
        his.setflags(write=False)
        self.los = los
        self.his = his

    @staticmethod
    def from_intervals(dims: Iterable[Interval]) -> "IntervalBox":
        dims = list(dims)
        return IntervalBox(
            np.array([d.lo for d in dims]), np.array([d.hi for d in dims])
        )

    @staticmethod
    def from_bounds(bounds: Sequence[Sequence[float]]) -> "IntervalBox":
        arr = np.asarray(bounds, dtype=float)
        return IntervalBox(arr[:, 0], arr[:, 1])

    def __len__(self) -> int:
        return self.los.size

    def __getitem__(self, i: int) -> Interval:
        return Interval(float(self.los[i]), float(self.his[i]))

    def intervals(self) -> tuple[Interval, ...]:
        return tuple(self[i] for i in range(len(self)))

    @property
    def widths(self) -> np.ndarray:
        return self.his - self.los

    @property
    def mids(self) -> np.ndarray:
        return 0.5 * (self.los + self.his)

    @property
    def rads(self) -> np.ndarray:
        return 0.5 * (self.his - self.los)

    def contains(self, x: np.ndarray, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool((x >= self.los - atol).all() and (x <= self.his + atol).all())

    def encloses(self, other: "IntervalBox") -> bool:
        return bool((self.los <= other.los).all() and (other.his <= self.his).all())

    def intersect(self, other: "IntervalBox") -> "IntervalBox | None":
        los = np.maximum(self.los, other.los)
        his = np.minimum(self.his, other.his)
        if (los > his).any():
            return None
        return IntervalBox(los, his)

    def replace(self, i: int, iv: Interval) -> "IntervalBox":
        los = self.los.copy()
        his = self.his.copy()
        los[i] = iv.lo
        his[i] = iv.hi
        return IntervalBox(los, his)

    def split(self, dim: int | None = None) -> tuple["IntervalBox", "IntervalBox"]:
        """Bisect at the midpoint of `dim` (default: widest, lowest index wins ties)."""
        w = self.widths
        if dim is None:
            dim = int(np.argmax(w))
        if w[dim] <= 0.0:
            raise ValueError("cannot split a degenerate (point) box")
        m = 0.5 * (self.los[dim] + self.his[dim])
        lo_half = self.replace(dim, Interval(float(self.los[dim]), m))
        hi_half = self.replace(dim, Interval(m, float(self.his[dim])))
        return lo_half, hi_half

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Map points u in [0,1]^n into the box."""
        return self.los + np.asarray(u, dtype=float) * (self.his - self.los)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IntervalBox):
            return NotImplemented
        return bool((self.los == other.los).all() and (self.his == other.his).all())

    def __hash__(self):  # boxes are mutable-array-backed; keep them unhashable
        raise TypeError("IntervalBox is not hashable")

    def __repr__(self) -> str:
        parts = ";".join(f"[{lo},{hi}]" for lo, hi in zip(self.los, self.his))
        return f"Box{{{parts}}}"
