"""Discrete-time safety verification of the fitted lifted-linear system.

Four interchangeable per-step strategies over the same problem:

  direct     solve the nonlinear initial-set encoding at every step;
  interval   zonotope support test on the interval overapproximation first,
             nonlinear solve only when the reach set touches the unsafe set;
  backprop   pull unsafe constraints back through the step operator and run
             the contraction fixpoint on the lifted initial box; the solver
             only sees the contracted initial set;
  zono_split recursive max-range splitting of the initial box with
             backpropagation on each part, solver calls only at leaf level.

Steps are checked in order from 0 (the initial set itself is checked too);
the first unsafe step terminates the run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .deltasat import DEFAULT_DELTA, DEFAULT_MAX_BOXES, ResourceExhausted, build_system, solve
from .koopman import KoopmanModel
from .models import IntegrationError, OdeModel, integrate
from .numerics.intervals import Interval, IntervalBox
from .observables import lift_box, lift_point
from .sets import (
    HalfSpace,
    UnsafeSet,
    backpropagate_halfspace,
    box_from_halfspaces,
    contract_box_halfspaces,
    lift_unsafe,
    reach_zonotope,
)

__all__ = [
    "VerificationProblem",
    "Verdict",
    "StepStats",
    "CounterexampleReport",
    "verify",
    "verify_direct",
    "verify_interval",
    "verify_backprop",
    "verify_zono_split",
    "validate_counterexample",
]

ALGORITHMS = ("direct", "interval", "backprop", "zono_split")
_BACKPROP_MAX_ROUNDS = 50
_BACKPROP_REL_TOL = 0.01


@dataclass(frozen=True)
class VerificationProblem:
    model: KoopmanModel
    init: IntervalBox | tuple[HalfSpace, ...]
    unsafe: UnsafeSet
    horizon: float
    algorithm: str = "direct"
    max_level: int = 0
    delta: float = DEFAULT_DELTA
    split_contract_late: bool = False  # contract only at leaves instead of every node
    max_boxes: int = DEFAULT_MAX_BOXES
    solver_timeout: float | None = 60.0
    ode: OdeModel | None = None  # original system, used for witness validation
    external_solver: str | None = None  # pipe SMT-LIB text to this command instead

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; pick from {ALGORITHMS}")
        steps = self.horizon / self.model.h
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("the horizon must be an integer multiple of the trained step")
        if self.max_level < 0:
            raise ValueError("max_level must be non-negative")
        if self.unsafe.dim != self.model.state_dim:
            raise ValueError("unsafe set dimension does not match the model")

    @property
    def h(self) -> float:
        return self.model.h

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.model.h))

    def initial_box(self) -> IntervalBox:
        if isinstance(self.init, IntervalBox):
            return self.init
        return box_from_halfspaces(self.init, self.model.state_dim)

    def initial_halfspaces(self) -> tuple[HalfSpace, ...]:
        return () if isinstance(self.init, IntervalBox) else tuple(self.init)


@dataclass
class StepStats:
    step: int
    outcome: str
    solver_calls: int = 0
    splits: int = 0
    time_s: float = 0.0


@dataclass
class CounterexampleReport:
    witness_x0: np.ndarray
    step: int
    linear_state: np.ndarray
    linear_slacks: list[float]
    linear_in_unsafe: bool
    blackbox_state: np.ndarray | None
    blackbox_slacks: list[float] | None
    blackbox_in_unsafe: bool | None
    state_discrepancy: float | None
    integration_failure: str | None = None


@dataclass
class Verdict:
    kind: str  # safe | unsafe | unknown
    step: int | None = None
    witness_x0: np.ndarray | None = None
    steps: list[StepStats] = field(default_factory=list)
    validation: CounterexampleReport | None = None

    def __post_init__(self) -> None:
        if self.kind == "unsafe" and (self.step is None or self.witness_x0 is None):
            raise ValueError("unsafe verdicts carry a step and a witness")
        if self.kind == "safe" and (self.step is not None or self.witness_x0 is not None):
            raise ValueError("safe verdicts carry neither step nor witness")

    @property
    def solver_calls(self) -> int:
        return sum(s.solver_calls for s in self.steps)

    @property
    def splits(self) -> int:
        return sum(s.splits for s in self.steps)

    @property
    def runtime_s(self) -> float:
        return sum(s.time_s for s in self.steps)


class _Unknown(Exception):
    pass


def _run_external_solver(command: str, system, delta: float) -> str:
    """Pipe SMT-LIB text to a user-supplied solver; parse its first line."""
    import shlex
    import subprocess

    from .deltasat import emit_smtlib

    text = emit_smtlib(system, delta)
    proc = subprocess.run(
        shlex.split(command), input=text, capture_output=True, text=True, timeout=600
    )
    first = (proc.stdout.strip().splitlines() or [""])[0].strip().lower()
    if first.startswith("unsat"):
        return "unsat"
    if first.startswith(("delta-sat", "sat")):
        return "sat"
    raise _Unknown(f"external solver answered {first!r}")


class _Run:
    """Per-run state shared by the step strategies."""

    def __init__(self, problem: VerificationProblem):
        self.p = problem
        self.model = problem.model
        self.lifted = lift_unsafe(problem.unsafe, self.model.size)
        self.init_box = problem.initial_box()
        self.init_halfspaces = problem.initial_halfspaces()
        self.t0 = Interval(0.0, 0.0)
        self.stats: StepStats | None = None

    # -- shared pieces ------------------------------------------------------

    def _solve(self, step: int, init) -> np.ndarray | None:
        """Run the nonlinear solver; return a witness point or None for unsat."""
        self.stats.solver_calls += 1
        extra = self.init_halfspaces if isinstance(init, IntervalBox) else ()
        system = build_system(self.model, init, self.p.unsafe, step, extra_linear=extra)
        if self.p.external_solver is not None:
            kind = _run_external_solver(self.p.external_solver, system, self.p.delta)
            if kind == "unsat":
                return None
            # the external interface reports a verdict only; the box midpoint
            # stands in for the (uncertified) witness point
            return system.bounds.mids
        try:
            verdict = solve(
                system,
                delta=self.p.delta,
                max_boxes=self.p.max_boxes,
                timeout=self.p.solver_timeout,
            )
        except ResourceExhausted as err:
            raise _Unknown(str(err)) from err
        if verdict.kind == "unsat":
            return None
        return verdict.witness.mids

    def _propagated(self, step: int) -> list[HalfSpace]:
        k_i = self.model.step_operator(step)
        return [backpropagate_halfspace(k_i, h) for h in self.lifted]

    def _contract(self, step: int, state_box: IntervalBox) -> IntervalBox | None:
        """Backpropagation fixpoint: contract the lifted box against the
        pulled-back constraints, project to the state coordinates, re-lift,
        and repeat until progress stalls. None means provably safe."""
        prop = self._propagated(step)
        n = self.model.state_dim
        state = state_box
        obs = lift_box(self.model.dictionary, state, self.t0)
        for _ in range(_BACKPROP_MAX_ROUNDS):
            obs = contract_box_halfspaces(obs, prop)
            if obs is None:
                return None
            new_state = IntervalBox(obs.los[:n], obs.his[:n])
            widths = state.widths
            shrink = widths - new_state.widths
            state = new_state
            if (shrink <= _BACKPROP_REL_TOL * np.maximum(widths, 1e-300)).all():
                break
            relift = lift_box(self.model.dictionary, state, self.t0)
            obs = relift.intersect(obs)
            if obs is None:
                return None
        return state

    # -- per-step strategies -------------------------------------------------

    def step_direct(self, step: int) -> np.ndarray | None:
        init = self.init_halfspaces or self.init_box
        return self._solve(step, init)

    def step_interval(self, step: int) -> np.ndarray | None:
        obs_box = lift_box(self.model.dictionary, self.init_box, self.t0)
        zono = reach_zonotope(obs_box, self.model.step_operator(step))
        for hs in self.lifted:
            reach_min = -zono.support(-hs.normal)
            margin = 1e-12 * max(1.0, abs(reach_min), abs(hs.offset))
            if reach_min > hs.offset + margin:
                return None  # the reach set provably misses this constraint
        init = self.init_halfspaces or self.init_box
        return self._solve(step, init)

    def step_backprop(self, step: int) -> np.ndarray | None:
        contracted = self._contract(step, self.init_box)
        if contracted is None:
            return None
        return self._solve(step, contracted)

    def step_zono_split(self, step: int) -> np.ndarray | None:
        contract_every_node = not self.p.split_contract_late

        def rec(box: IntervalBox, level: int) -> np.ndarray | None:
            if contract_every_node or level >= self.p.max_level:
                reduced = self._contract(step, box)
                if reduced is None:
                    return None
                box = reduced
            if level >= self.p.max_level or (box.widths <= 0).all():
                return self._solve(step, box)
            self.stats.splits += 1
            lo_half, hi_half = box.split()
            witness = rec(lo_half, level + 1)
            if witness is not None:
                return witness
            return rec(hi_half, level + 1)

        return rec(self.init_box, 0)


def verify(problem: VerificationProblem) -> Verdict:
    run = _Run(problem)
    strategy = getattr(run, f"step_{problem.algorithm}")
    steps: list[StepStats] = []
    for i in range(problem.n_steps + 1):
        stats = StepStats(step=i, outcome="safe")
        run.stats = stats
        start = time.perf_counter()
        try:
            witness = strategy(i)
        except _Unknown:
            stats.outcome = "unknown"
            stats.time_s = time.perf_counter() - start
            steps.append(stats)
            return Verdict(kind="unknown", step=i, steps=steps)
        stats.time_s = time.perf_counter() - start
        if witness is not None:
            stats.outcome = "unsafe"
            steps.append(stats)
            return Verdict(kind="unsafe", step=i, witness_x0=witness, steps=steps)
        steps.append(stats)
    return Verdict(kind="safe", steps=steps)


def _with_algorithm(problem: VerificationProblem, algorithm: str) -> VerificationProblem:
    if problem.algorithm == algorithm:
        return problem
    from dataclasses import replace

    return replace(problem, algorithm=algorithm)


def verify_direct(problem: VerificationProblem) -> Verdict:
    return verify(_with_algorithm(problem, "direct"))


def verify_interval(problem: VerificationProblem) -> Verdict:
    return verify(_with_algorithm(problem, "interval"))


def verify_backprop(problem: VerificationProblem) -> Verdict:
    return verify(_with_algorithm(problem, "backprop"))


def verify_zono_split(problem: VerificationProblem) -> Verdict:
    return verify(_with_algorithm(problem, "zono_split"))


def validate_counterexample(problem: VerificationProblem, verdict: Verdict) -> CounterexampleReport:
    """Check an unsafe witness against the fitted model and the original ODE.

    Discrepancies between the two are reported as-is; the linear check is the
    one the verdict is accountable to, the black-box check measures how far
    the linearization drifted at this witness.
    """
    if verdict.kind != "unsafe":
        raise ValueError("only unsafe verdicts carry a counterexample to validate")
    model = problem.model
    x0 = np.asarray(verdict.witness_x0, dtype=float)
    i = verdict.step

    y0 = lift_point(model.dictionary, x0, 0.0)
    y_i = model.step_operator(i) @ y0
    x_lin = model.projection @ y_i
    lin_slacks = [h.slack(x_lin) for h in problem.unsafe.halfspaces]
    scale = max(1.0, float(np.abs(x_lin).max()))
    lin_in = all(s >= -problem.delta * scale for s in lin_slacks)

    bb_state = bb_slacks = bb_in = disc = None
    failure = None
    if problem.ode is not None:
        try:
            if i == 0:
                bb_state = x0.copy()
            else:
                traj = integrate(problem.ode, x0, model.h, i * model.h)
                bb_state = traj.states[-1]
            bb_slacks = [h.slack(bb_state) for h in problem.unsafe.halfspaces]
            bb_in = all(s >= 0.0 for s in bb_slacks)
            disc = float(np.linalg.norm(bb_state - x_lin))
        except IntegrationError as err:
            failure = str(err)

    return CounterexampleReport(
        witness_x0=x0,
        step=i,
        linear_state=x_lin,
        linear_slacks=lin_slacks,
        linear_in_unsafe=lin_in,
        blackbox_state=bb_state,
        blackbox_slacks=bb_slacks,
        blackbox_in_unsafe=bb_in,
        state_discrepancy=disc,
        integration_failure=failure,
    )
