"""Extended DMD fitting of the finite Koopman operator and state recovery.

The one-step operator is the least-squares solution K = G' G+ over lifted
snapshot pairs, with a truncated-SVD pseudoinverse. Each snapshot is lifted
at its own absolute time, so time-dependent observables (sin t, cos t
factors) are handled by the same discrete best-fit map; the operator at step
i is realized as the i-th matrix power.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expressions import Expr
from .models import SnapshotData
from .numerics.linalg import matrix_exponential, truncated_pseudoinverse
from .observables import Dictionary, differentiate_along, lift_columns

__all__ = ["KoopmanModel", "FitError", "fit_edmd", "fit_edmd_derivative", "save_model", "load_model"]


class FitError(RuntimeError):
    """Snapshot data is degenerate; no operator can be fitted."""


@dataclass(frozen=True)
class KoopmanModel:
    """Fitted lifted-linear model: g(x_{t+h}) ~ K_step g(x_t)."""

    dictionary: Dictionary
    k_step: np.ndarray
    h: float
    k_inf: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    _powers: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        k = self.dictionary.size
        if self.k_step.shape != (k, k):
            raise ValueError(f"operator must be {k}x{k}, got {self.k_step.shape}")
        if self.k_inf is not None and self.k_inf.shape != (k, k):
            raise ValueError("infinitesimal operator has wrong shape")
        if self.h <= 0:
            raise ValueError("step size must be positive")

    @property
    def size(self) -> int:
        return self.dictionary.size

    @property
    def state_dim(self) -> int:
        return self.dictionary.state_dim

    @property
    def projection(self) -> np.ndarray:
        return self.dictionary.projection()

    def step_operator(self, i: int) -> np.ndarray:
        """K_step^i by square-and-multiply with cached power-of-two ladder."""
        if i < 0:
            raise ValueError("step index must be non-negative")
        got = self._powers.get(i)
        if got is not None:
            return got
        result = np.eye(self.size)
        sq = self.k_step
        bit = 0
        rest = i
        while rest:
            if rest & 1:
                result = result @ self._pow2(bit)
            rest >>= 1
            bit += 1
        result.setflags(write=False)
        self._powers[i] = result
        return result

    def _pow2(self, bit: int) -> np.ndarray:
        key = ("2^", bit)
        got = self._powers.get(key)
        if got is None:
            got = self.k_step if bit == 0 else self._pow2(bit - 1) @ self._pow2(bit - 1)
            self._powers[key] = got
        return got

    def predict_states(self, x0: np.ndarray, n_steps: int) -> np.ndarray:
        """Trajectory of recovered states at t = 0, h, ..., n_steps*h."""
        from .observables import lift_point

        y = lift_point(self.dictionary, np.asarray(x0, dtype=float), 0.0)
        m = self.projection
        out = np.empty((n_steps + 1, self.state_dim))
        out[0] = m @ y
        cur = y
        for i in range(1, n_steps + 1):
            cur = self.k_step @ cur
            out[i] = m @ cur
        return out


def _lift_pairs(d: Dictionary, data: SnapshotData) -> tuple[np.ndarray, np.ndarray]:
    if d.state_dim != data.dim:
        raise ValueError("dictionary and snapshot dimensions disagree")
    if data.n_pairs < d.size:
        warnings.warn(
            f"only {data.n_pairs} snapshot pairs for {d.size} observables; "
            "the fit is underdetermined",
            stacklevel=3,
        )
    g = lift_columns(d, data.x, data.times)
    gp = lift_columns(d, data.xprime, data.times + data.step)
    return g, gp


def _fit(g: np.ndarray, target: np.ndarray, rank, energy) -> tuple[np.ndarray, float]:
    if not np.isfinite(g).all() or not np.isfinite(target).all():
        raise FitError("lifted snapshot data contains non-finite values")
    if np.linalg.norm(g) == 0.0:
        raise FitError("lifted snapshot matrix is identically zero")
    k = target @ truncated_pseudoinverse(g, rank=rank, energy=energy)
    denom = np.linalg.norm(target)
    residual = float(np.linalg.norm(target - k @ g) / denom) if denom > 0 else 0.0
    return k, residual


def fit_edmd(
    d: Dictionary,
    data: SnapshotData,
    rank: int | None = None,
    energy: float | None = None,
) -> KoopmanModel:
    """One-step EDMD: K_step = G' G+ over snapshots lifted at their own times."""
    g, gp = _lift_pairs(d, data)
    k_step, residual = _fit(g, gp, rank, energy)
    meta = {
        "method": "edmd",
        "n_pairs": int(data.n_pairs),
        "truncation": {"rank": rank, "energy": energy},
        "residual": residual,
    }
    return KoopmanModel(dictionary=d, k_step=k_step, h=data.step, meta=meta)


def fit_edmd_derivative(
    d: Dictionary,
    data: SnapshotData,
    rhs: Sequence[Expr] | None = None,
    rank: int | None = None,
    energy: float | None = None,
) -> KoopmanModel:
    """Infinitesimal EDMD: solve dG/dt ~ K~ G, then K_step = e^{K~ h}.

    With a symbolic vector field the observable time derivatives are exact;
    otherwise dG/dt comes from central differences along each trajectory
    (interior snapshots only).
    """
    from .expressions import eval_array
    from .observables import lift_point

    if d.state_dim != data.dim:
        raise ValueError("dictionary and snapshot dimensions disagree")

    if rhs is not None:
        g = lift_columns(d, data.x, data.times)
        derivs = differentiate_along(d, tuple(rhs))
        memo: dict = {}
        gdot = np.vstack([eval_array(e, data.x, data.times, memo) for e in derivs])
    else:
        h = data.step
        interior = np.zeros(data.n_pairs, dtype=bool)
        interior[1:] = (data.traj_ids[1:] == data.traj_ids[:-1]) & (
            np.abs(np.diff(data.times) - h) <= 1e-9 * max(1.0, h)
        )
        if not interior.any():
            raise FitError("no interior snapshots available for finite differences")
        idx = np.nonzero(interior)[0]
        g = lift_columns(d, data.x[:, idx], data.times[idx])
        g_next = lift_columns(d, data.xprime[:, idx], data.times[idx] + h)
        g_prev = lift_columns(d, data.x[:, idx - 1], data.times[idx - 1])
        gdot = (g_next - g_prev) / (2.0 * h)

    k_inf, residual = _fit(g, gdot, rank, energy)
    k_step = matrix_exponential(k_inf, data.step)
    meta = {
        "method": "edmd_derivative",
        "derivative_source": "symbolic" if rhs is not None else "central_difference",
        "n_pairs": int(g.shape[1]),
        "truncation": {"rank": rank, "energy": energy},
        "residual": residual,
    }
    return KoopmanModel(dictionary=d, k_step=k_step, h=data.step, k_inf=k_inf, meta=meta)


# ---------------------------------------------------------------------------
# model files


def _matrix_to_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _matrix_from_json(obj: dict) -> np.ndarray:
    return np.array(obj["data"], dtype=float).reshape(obj["shape"])


def save_model(model: KoopmanModel, path) -> None:
    doc = {
        "dictionary": model.dictionary.to_strings(),
        "state_dim": model.dictionary.state_dim,
        "h": model.h,
        "K_step": _matrix_to_json(model.k_step),
        "K_inf": None if model.k_inf is None else _matrix_to_json(model.k_inf),
        "meta": model.meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> KoopmanModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    d = Dictionary.from_strings(doc["dictionary"], doc["state_dim"])
    k_inf = None if doc.get("K_inf") is None else _matrix_from_json(doc["K_inf"])
    return KoopmanModel(
        dictionary=d,
        k_step=_matrix_from_json(doc["K_step"]),
        h=float(doc["h"]),
        k_inf=k_inf,
        meta=dict(doc.get("meta", {})),
    )
