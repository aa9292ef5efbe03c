"""ODE fixtures, numerical integration, and snapshot-data generation.

Benchmark vector fields are transcribed from the HyPro continuous-systems
benchmark collection; their coefficients are pinned in the versioned
``data/benchmarks.json`` fixtures file. Anything can also be supplied as
truly black-box data through the snapshot CSV interface
(header ``traj_id,t,x1,...,xn``, one row per snapshot).
"""

from __future__ import annotations

import csv
import importlib.resources
import json
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import qmc

from . import expressions as ex
from .expressions import Expr
from .numerics.intervals import IntervalBox

__all__ = [
    "OdeModel",
    "Trajectory",
    "SnapshotData",
    "IntegrationError",
    "integrate",
    "sobol_points",
    "generate_snapshots",
    "save_snapshots_csv",
    "load_snapshots_csv",
    "quartic_decay",
    "builtin_model",
    "benchmark_setup",
    "benchmark_names",
    "FIXTURES_VERSION",
]

RTOL = 1e-8
ATOL = 1e-10


class IntegrationError(RuntimeError):
    """Integration failed (stiff blow-up / step underflow)."""

    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last valid time {last_time:g})")
        self.last_time = last_time


@dataclass(frozen=True)
class OdeModel:
    """Autonomous vector field dx/dt = f(x) with symbolic right-hand side."""

    name: str
    dim: int
    rhs: tuple[Expr, ...]
    parameters: dict[str, float]
    var_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.rhs) != self.dim or len(self.var_names) != self.dim:
            raise ValueError("rhs / var_names length must equal dim")
        for e in self.rhs:
            if ex.max_var_index(e) >= self.dim:
                raise ValueError(f"rhs component {e!r} references unknown variables")
            if ex.contains_time(e):
                raise ValueError("vector fields must be autonomous")

    @cached_property
    def _f(self):
        return ex.compile_point_fn(self.rhs)

    def field(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._f(x, 0.0))

    def var_index(self, name: str) -> int:
        try:
            return self.var_names.index(name)
        except ValueError:
            raise KeyError(f"model {self.name!r} has no variable {name!r}") from None


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), dim)

    def __post_init__(self) -> None:
        if self.times.ndim != 1 or self.states.shape[0] != self.times.size:
            raise ValueError("times/states shapes do not match")
        if (np.diff(self.times) <= 0).any():
            raise ValueError("times must be strictly increasing")


@dataclass(frozen=True)
class SnapshotData:
    """Aligned snapshot pairs: column j of xprime is one step after column j of x.

    `times` holds the absolute time of each x column (its successor is at
    times + step); `traj_ids` records which trajectory produced the pair, so
    no pair ever crosses a trajectory seam.
    """

    x: np.ndarray  # (n, m)
    xprime: np.ndarray  # (n, m)
    times: np.ndarray  # (m,)
    traj_ids: np.ndarray  # (m,)
    step: float

    def __post_init__(self) -> None:
        if self.x.shape != self.xprime.shape:
            raise ValueError("x and xprime must have identical shapes")
        m = self.x.shape[1]
        if self.times.shape != (m,) or self.traj_ids.shape != (m,):
            raise ValueError("times/traj_ids must have one entry per column")
        if self.step <= 0:
            raise ValueError("step must be positive")

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.x.shape[1]


def _check_grid(h: float, horizon: float) -> int:
    if h <= 0 or horizon <= 0:
        raise ValueError("step and horizon must be positive")
    steps = horizon / h
    if abs(steps - round(steps)) > 1e-9:
        raise ValueError(f"horizon {horizon} is not an integer multiple of step {h}")
    return int(round(steps))


def integrate(model: OdeModel, x0: Sequence[float], h: float, horizon: float) -> Trajectory:
    """Adaptive RK45 sampled on the grid t = 0, h, ..., horizon."""
    n_steps = _check_grid(h, horizon)
    times = np.linspace(0.0, horizon, n_steps + 1)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.dim,):
        raise ValueError(f"initial state has wrong shape {x0.shape}")
    f = model._f
    res = solve_ivp(
        lambda t, y: f(y, t),
        (0.0, horizon),
        x0,
        method="RK45",
        t_eval=times,
        rtol=RTOL,
        atol=ATOL,
    )
    if not res.success or res.y.shape[1] != times.size:
        last = float(res.t[-1]) if res.t.size else 0.0
        raise IntegrationError(f"integration of {model.name!r} failed: {res.message}", last)
    return Trajectory(times=times, states=res.y.T.copy())


def sobol_points(box: IntervalBox, count: int) -> np.ndarray:
    """First `count` points of the (unscrambled) Sobol sequence, scaled into the box."""
    if count < 1:
        raise ValueError("count must be >= 1")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non-power-of-two draw is fine here
        u = qmc.Sobol(d=len(box), scramble=False).random(count)
    return box.sample(u)


def generate_snapshots(
    model: OdeModel,
    init: IntervalBox,
    n_traj: int,
    h: float,
    horizon: float,
) -> SnapshotData:
    """Integrate from Sobol seeds and concatenate per-trajectory pairs columnwise."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    seeds = sobol_points(init, n_traj)
    xs, xps, ts, ids = [], [], [], []
    for k, x0 in enumerate(seeds):
        try:
            traj = integrate(model, x0, h, horizon)
        except IntegrationError as err:
            raise IntegrationError(
                f"trajectory {k} from {np.array2string(x0, precision=6)} failed: {err}",
                err.last_time,
            ) from err
        xs.append(traj.states[:-1].T)
        xps.append(traj.states[1:].T)
        ts.append(traj.times[:-1])
        ids.append(np.full(traj.times.size - 1, k, dtype=np.int64))
    return SnapshotData(
        x=np.hstack(xs),
        xprime=np.hstack(xps),
        times=np.concatenate(ts),
        traj_ids=np.concatenate(ids),
        step=h,
    )


# ---------------------------------------------------------------------------
# snapshot CSV interface


def save_snapshots_csv(data: SnapshotData, path) -> None:
    """One row per snapshot: traj_id,t,x1,...,xn (the final snapshot of each
    trajectory comes from the xprime side)."""
    n = data.dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traj_id", "t"] + [f"x{i + 1}" for i in range(n)])
        m = data.n_pairs
        for j in range(m):
            w.writerow(
                [int(data.traj_ids[j]), repr(float(data.times[j]))]
                + [repr(float(v)) for v in data.x[:, j]]
            )
            last_of_traj = j == m - 1 or data.traj_ids[j + 1] != data.traj_ids[j]
            if last_of_traj:
                w.writerow(
                    [int(data.traj_ids[j]), repr(float(data.times[j]) + data.step)]
                    + [repr(float(v)) for v in data.xprime[:, j]]
                )


def save_trajectory_csv(traj: Trajectory, traj_id: int, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        n = traj.states.shape[1]
        w.writerow(["traj_id", "t"] + [f"x{i + 1}" for i in range(n)])
        for t, row in zip(traj.times, traj.states):
            w.writerow([traj_id, repr(float(t))] + [repr(float(v)) for v in row])


def load_snapshots_csv(paths) -> SnapshotData:
    """Read snapshot CSVs and form within-trajectory pairs (never across seams)."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    rows: list[tuple[int, float, np.ndarray]] = []
    dim = None
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            r = csv.reader(fh)
            header = next(r)
            if header[:2] != ["traj_id", "t"]:
                raise ValueError(f"{path}: expected header traj_id,t,x1,...")
            d = len(header) - 2
            if dim is None:
                dim = d
            elif dim != d:
                raise ValueError("snapshot files disagree on state dimension")
            for line in r:
                rows.append((int(line[0]), float(line[1]), np.array([float(v) for v in line[2:]])))
    if not rows:
        raise ValueError("no snapshot rows found")

    by_traj: dict[int, list[tuple[float, np.ndarray]]] = {}
    for tid, t, xv in rows:
        by_traj.setdefault(tid, []).append((t, xv))

    step = None
    xs, xps, ts, ids = [], [], [], []
    for tid in sorted(by_traj):
        seq = sorted(by_traj[tid], key=lambda p: p[0])
        if len(seq) < 2:
            continue
        times = np.array([p[0] for p in seq])
        states = np.vstack([p[1] for p in seq])
        gaps = np.diff(times)
        if step is None:
            step = float(gaps[0])
        if (np.abs(gaps - step) > 1e-9 * max(1.0, step)).any():
            raise ValueError(f"trajectory {tid} is not uniformly sampled with step {step}")
        xs.append(states[:-1].T)
        xps.append(states[1:].T)
        ts.append(times[:-1])
        ids.append(np.full(times.size - 1, tid, dtype=np.int64))
    if step is None:
        raise ValueError("no trajectory has two or more snapshots")
    return SnapshotData(
        x=np.hstack(xs), xprime=np.hstack(xps), times=np.concatenate(ts),
        traj_ids=np.concatenate(ids), step=step,
    )


# ---------------------------------------------------------------------------
# built-in systems


def quartic_decay(mu: float = -0.05, lam: float = -1.0) -> OdeModel:
    """2-D system with an exact 5-observable linear lift:
    dx1/dt = mu*x1, dx2/dt = lam*(x2 - x1^4)."""
    x1, x2 = ex.var(0), ex.var(1)
    rhs = (
        ex.mul(ex.const(mu), x1),
        ex.mul(ex.const(lam), ex.add(x2, ex.mul(ex.const(-1.0), ex.int_pow(x1, 4)))),
    )
    return OdeModel(
        name="quartic_decay",
        dim=2,
        rhs=rhs,
        parameters={"mu": mu, "lam": lam},
        var_names=("x1", "x2"),
    )


def quartic_lift_dictionary():
    """The invariant-subspace dictionary (x1, x2, x1^4, x1^3, x1^2)."""
    from .observables import Dictionary

    x1, x2 = ex.var(0), ex.var(1)
    return Dictionary((x1, x2, ex.int_pow(x1, 4), ex.int_pow(x1, 3), ex.int_pow(x1, 2)), 2)


def _load_fixtures() -> dict:
    text = importlib.resources.files("koopman_reach.data").joinpath("benchmarks.json").read_text()
    return json.loads(text)


_FIXTURES = _load_fixtures()
FIXTURES_VERSION = _FIXTURES["version"]


def benchmark_names() -> list[str]:
    return sorted(_FIXTURES["models"]) + ["quartic_decay"]


def builtin_model(name: str) -> OdeModel:
    if name == "quartic_decay":
        return quartic_decay()
    try:
        spec = _FIXTURES["models"][name]
    except KeyError:
        raise KeyError(f"unknown builtin model {name!r}; available: {benchmark_names()}") from None
    rhs = tuple(ex.parse_expression(s) for s in spec["rhs"])
    return OdeModel(
        name=name,
        dim=len(rhs),
        rhs=rhs,
        parameters=dict(spec.get("parameters", {})),
        var_names=tuple(spec["var_names"]),
    )


def benchmark_setup(name: str) -> dict:
    """Benchmark problem setup: init box, unsafe template, dictionary spec, horizons."""
    if name == "quartic_decay":
        return {
            "init": [[0.9, 1.1], [0.9, 1.1]],
            "unsafe": {"expr": "x2 >= 0.6 - 0.02*i", "i_range": [0, 10]},
            "dictionary": None,  # the exact 5-observable lift, see koopman fixtures
            "horizon": {"h": 0.5, "T": 5.0},
            "training": {"n_traj": 100, "T_train": 5.0},
        }
    spec = _FIXTURES["models"][name]
    return {
        "init": spec["init"],
        "unsafe": spec["unsafe"],
        "dictionary": spec["dictionary"],
        "horizon": spec["horizon"],
        "training": spec["training"],
    }
