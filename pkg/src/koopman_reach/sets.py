"""Half-spaces, zonotopes, and the contraction machinery.

Constraint pull-back through the step operator is done by transposition
(the pre-image of a half-space under y -> K y), never by inverting K, which
may be singular after SVD truncation. Box contraction against a linear
constraint is a single forward-backward pass; the round-robin sweep loop
with the 1%-progress / 50-sweep guard realizes the fixpoint iteration of
the backpropagation algorithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics.intervals import IntervalBox
from .numerics.lp import bound_variable

__all__ = [
    "HalfSpace",
    "UnsafeSet",
    "Zonotope",
    "lift_unsafe",
    "backpropagate_halfspace",
    "reach_zonotope",
    "contract_box_linear",
    "contract_box_halfspaces",
    "contract_domain",
    "split_box",
    "box_from_halfspaces",
]

CONTRACTION_REL_TOL = 0.01
CONTRACTION_MAX_SWEEPS = 50


@dataclass(frozen=True)
class HalfSpace:
    """The set {y : normal . y <= offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self) -> None:
        q = np.asarray(self.normal, dtype=float)
        if q.ndim != 1 or not q.any():
            raise ValueError("half-space normal must be a non-zero vector")
        q = q.copy()
        q.setflags(write=False)
        object.__setattr__(self, "normal", q)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return self.normal.size

    def contains(self, y: np.ndarray, atol: float = 0.0) -> bool:
        return float(self.normal @ y) <= self.offset + atol

    def slack(self, y: np.ndarray) -> float:
        """offset - normal . y; non-negative inside the half-space."""
        return self.offset - float(self.normal @ y)

    def __repr__(self) -> str:
        q = ",".join(f"{v:g}" for v in self.normal)
        return f"HalfSpace{{{q};{self.offset:g}}}"


@dataclass(frozen=True)
class UnsafeSet:
    """Conjunction of half-spaces over the state space."""

    halfspaces: tuple[HalfSpace, ...]

    def __post_init__(self) -> None:
        if not self.halfspaces:
            raise ValueError("unsafe set needs at least one constraint")
        dims = {h.dim for h in self.halfspaces}
        if len(dims) != 1:
            raise ValueError("unsafe-set constraints disagree on dimension")

    @property
    def dim(self) -> int:
        return self.halfspaces[0].dim

    def contains(self, x: np.ndarray, atol: float = 0.0) -> bool:
        return all(h.contains(x, atol) for h in self.halfspaces)


def lift_unsafe(unsafe: UnsafeSet, lifted_dim: int) -> list[HalfSpace]:
    """Re-express state constraints over the lift: coefficients land on the
    identity-observable coordinates, zeros elsewhere."""
    n = unsafe.dim
    if lifted_dim < n:
        raise ValueError("lifted dimension smaller than the state dimension")
    out = []
    for h in unsafe.halfspaces:
        q = np.zeros(lifted_dim)
        q[:n] = h.normal
        out.append(HalfSpace(q, h.offset))
    return out


def backpropagate_halfspace(k_mat: np.ndarray, hs: HalfSpace) -> HalfSpace:
    """Pre-image of {q.y <= r} under y -> K y, i.e. {(K^T q).y <= r}."""
    k_mat = np.asarray(k_mat, dtype=float)
    if k_mat.shape != (hs.dim, hs.dim):
        raise ValueError("operator and half-space dimensions disagree")
    return HalfSpace(k_mat.T @ hs.normal, hs.offset)


@dataclass(frozen=True)
class Zonotope:
    """Affine image {center + generators @ alpha : alpha in domain}."""

    center: np.ndarray
    generators: np.ndarray  # (ambient_dim, n_gens)
    domain: IntervalBox

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=float)
        g = np.asarray(self.generators, dtype=float)
        if g.ndim != 2 or g.shape[0] != c.size:
            raise ValueError("generator matrix must be (ambient_dim, n_gens)")
        if g.shape[1] != len(self.domain):
            raise ValueError("generator count must equal the domain dimension")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", g)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def n_gens(self) -> int:
        return self.generators.shape[1]

    def point(self, alpha: np.ndarray) -> np.ndarray:
        return self.center + self.generators @ np.asarray(alpha, dtype=float)

    def support(self, direction: np.ndarray) -> float:
        """max of direction . y over the zonotope, in closed form."""
        d = np.asarray(direction, dtype=float)
        if not d.any():
            raise ValueError("support direction must be non-zero")
        w = self.generators.T @ d
        hi = np.where(w >= 0, self.domain.his, self.domain.los)
        return float(d @ self.center + w @ hi)

    def with_domain(self, domain: IntervalBox) -> "Zonotope":
        return Zonotope(self.center, self.generators, domain)


def reach_zonotope(init_box: IntervalBox, k_mat: np.ndarray) -> Zonotope:
    """Image of a box under y -> K y as a zonotope with domain [-1,1]^k."""
    k_mat = np.asarray(k_mat, dtype=float)
    if k_mat.shape[1] != len(init_box):
        raise ValueError("operator and box dimensions disagree")
    center = k_mat @ init_box.mids
    generators = k_mat * init_box.rads[None, :]
    p = len(init_box)
    domain = IntervalBox(np.full(p, -1.0), np.full(p, 1.0))
    return Zonotope(center, generators, domain)


def contract_box_linear(box: IntervalBox, w: np.ndarray, s: float) -> IntervalBox | None:
    """Largest sub-box consistent with w . alpha <= s (single pass).

    Each coordinate is tightened against the minimal contribution of the
    others; bounds are rounded outward so no feasible point is clipped.
    Returns None when the constraint is infeasible over the box.
    """
    w = np.asarray(w, dtype=float)
    t_lo = np.minimum(w * box.los, w * box.his)
    total = t_lo.sum()
    if total > s:
        return None
    los = box.los.copy()
    his = box.his.copy()
    active = w != 0.0
    if active.any():
        rest = total - t_lo
        bound = (s - rest[active]) / w[active]
        pos = w[active] > 0
        b_up = np.nextafter(bound, np.inf)
        b_dn = np.nextafter(bound, -np.inf)
        idx = np.nonzero(active)[0]
        his[idx[pos]] = np.minimum(his[idx[pos]], b_up[pos])
        los[idx[~pos]] = np.maximum(los[idx[~pos]], b_dn[~pos])
    if (los > his).any():
        return None
    return IntervalBox(los, his)


def contract_box_halfspaces(
    box: IntervalBox,
    halfspaces,
    rel_tol: float = CONTRACTION_REL_TOL,
    max_sweeps: int = CONTRACTION_MAX_SWEEPS,
) -> IntervalBox | None:
    """Round-robin contraction until progress stalls below `rel_tol`."""
    cur = box
    for _ in range(max_sweeps):
        before = cur.widths
        for hs in halfspaces:
            cur = contract_box_linear(cur, hs.normal, hs.offset)
            if cur is None:
                return None
        shrink = before - cur.widths
        scale = np.maximum(before, 1e-300)
        if (shrink / scale).max() <= rel_tol:
            break
    return cur


def contract_domain(z: Zonotope, hs: HalfSpace) -> IntervalBox | None:
    """Contract the zonotope's domain box against an ambient half-space."""
    if hs.dim != z.dim:
        raise ValueError("half-space dimension does not match the zonotope")
    w = z.generators.T @ hs.normal
    s = hs.offset - float(hs.normal @ z.center)
    return contract_box_linear(z.domain, w, s)


def split_box(box: IntervalBox) -> tuple[IntervalBox, IntervalBox]:
    """Bisect the widest dimension (lowest index wins ties)."""
    return box.split()


def box_from_halfspaces(halfspaces, dim: int) -> IntervalBox:
    """Bounding box of a half-space conjunction via two LPs per dimension."""
    a = np.vstack([h.normal for h in halfspaces])
    b = np.array([h.offset for h in halfspaces])
    ivs = [bound_variable(a, b, i) for i in range(dim)]
    return IntervalBox.from_intervals(ivs)
