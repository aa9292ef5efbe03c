"""Dense matrix kernels: matrix exponential and truncated SVD pseudoinverse."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SvdResult",
    "matrix_exponential",
    "svd_factor",
    "truncated_pseudoinverse",
]

# Degree-13 Pade coefficients and the theta bound below which the
# approximant is accurate to double precision (Higham 2005).
_PADE13_B = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152


def matrix_exponential(a: np.ndarray, t: float = 1.0) -> np.ndarray:
    """e^{A t} by scaling-and-squaring with a degree-13 Pade core."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix exponential needs a square matrix, got {a.shape}")
    m = a * t
    norm = np.linalg.norm(m, 1)
    if norm == 0.0:
        return np.eye(a.shape[0])
    n_squarings = 0
    if norm > _THETA13:
        n_squarings = int(np.ceil(np.log2(norm / _THETA13)))
        m = m / (2.0**n_squarings)

    # normalized by b[0] so the solve below has a unit-diagonal left side
    b = tuple(x / _PADE13_B[0] for x in _PADE13_B)
    ident = np.eye(m.shape[0])
    m2 = m @ m
    m4 = m2 @ m2
    m6 = m4 @ m2
    u = m @ (m6 @ (b[13] * m6 + b[11] * m4 + b[9] * m2) + b[7] * m6 + b[5] * m4 + b[3] * m2 + b[1] * ident)
    v = m6 @ (b[12] * m6 + b[10] * m4 + b[8] * m2) + b[6] * m6 + b[4] * m4 + b[2] * m2 + b[0] * ident
    r = np.linalg.solve(v - u, v + u)
    for _ in range(n_squarings):
        r = r @ r
    return r


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD A = U diag(s) V^T with singular values sorted descending."""

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        s = self.singular_values
        if (s < 0).any() or (np.diff(s) > 0).any():
            raise ValueError("singular values must be non-negative and descending")


def svd_factor(a: np.ndarray) -> SvdResult:
    a = np.asarray(a, dtype=float)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return SvdResult(u=u, singular_values=s, v=vt.T)


def truncated_pseudoinverse(
    x: np.ndarray,
    rank: int | None = None,
    energy: float | None = None,
) -> np.ndarray:
    """Moore-Penrose pseudoinverse keeping only dominant singular values.

    Exactly one truncation mode applies: an explicit `rank`, or the smallest
    prefix of singular values whose squared sum reaches `energy` of the total
    (default: energy = 1 - 1e-10, dropping numerical-noise modes only).
    Singular values below 1e-12 * sigma_max are always dropped.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("cannot invert an empty matrix")
    if rank is not None and energy is not None:
        raise ValueError("specify rank or energy, not both")
    if energy is None and rank is None:
        energy = 1.0 - 1e-10

    f = svd_factor(x)
    s = f.singular_values
    if s[0] == 0.0:
        raise ValueError("all-zero matrix has no dominant mode to invert")

    if rank is not None:
        if not 1 <= rank <= s.size:
            raise ValueError(f"rank must be in [1, {s.size}], got {rank}")
        keep = rank
    else:
        if not 0.0 < energy <= 1.0:
            raise ValueError(f"energy fraction must be in (0, 1], got {energy}")
        cum = np.cumsum(s**2)
        keep = int(np.searchsorted(cum, energy * cum[-1] - 1e-15 * cum[-1])) + 1
    keep = min(keep, int(np.count_nonzero(s > 1e-12 * s[0])))

    u = f.u[:, :keep]
    v = f.v[:, :keep]
    inv_s = 1.0 / s[:keep]
    return (v * inv_s) @ u.T
