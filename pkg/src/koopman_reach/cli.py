"""Command-line driver: simulate | linearize | verify | report.

One JSON config per experiment (``"version": 1``). The pipeline is
deterministic end to end: Sobol seeds, the EDMD fit, and verification all
have no hidden randomness, so a rerun reproduces the same outputs (timing
fields aside). Files are written atomically (temp + rename).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deltasat import DEFAULT_DELTA
from .koopman import FitError, fit_edmd, load_model, save_model
from .models import (
    benchmark_names,
    benchmark_setup,
    builtin_model,
    generate_snapshots,
    integrate,
    load_snapshots_csv,
    quartic_lift_dictionary,
    save_trajectory_csv,
    sobol_points,
)
from .numerics.intervals import IntervalBox
from .observables import build_dictionary
from .sets import UnsafeSet
from .templates import parse_template
from .verify import VerificationProblem, validate_counterexample, verify

log = logging.getLogger("koopman_reach")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FIT = 3
EXIT_INTERNAL = 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    path: Path
    builtin: str | None
    snapshot_csv: list[Path]
    var_names: list[str]
    dictionary_spec: dict | None
    n_traj: int
    train_h: float
    train_horizon: float
    truncation: dict
    init: list[list[float]]
    unsafe_exprs: list[str]
    i_values: list[int]
    horizon: float
    algorithm: str
    max_level: int
    delta: float
    split_contract_late: bool
    plot_dims: tuple[int, int]
    output_dir: Path
    model_file: Path
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def model_name(self) -> str:
        return self.builtin if self.builtin else "csv"


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    if raw.get("version") != 1:
        raise ConfigError("config must declare \"version\": 1")

    model = raw.get("model", {})
    builtin = model.get("builtin")
    csv_paths = [Path(p) for p in model.get("snapshot_csv", [])]
    if (builtin is None) == (not csv_paths):
        raise ConfigError("model must give exactly one of 'builtin' or 'snapshot_csv'")
    if builtin is not None and builtin not in benchmark_names():
        raise ConfigError(f"unknown builtin model {builtin!r}; available: {benchmark_names()}")
    for p in csv_paths:
        if not p.exists():
            raise ConfigError(f"snapshot file {p} does not exist")

    defaults = benchmark_setup(builtin) if builtin else {}
    var_names = model.get("var_names") or (
        list(builtin_model(builtin).var_names) if builtin else []
    )

    dict_spec = raw.get("dictionary", defaults.get("dictionary"))
    training = {**defaults.get("training", {}), **raw.get("training", {})}
    horizon_defaults = defaults.get("horizon", {})
    problem = {**raw.get("problem", {})}

    init = problem.get("init", defaults.get("init"))
    if init is None:
        raise ConfigError("problem.init is required for CSV-sourced models")
    unsafe_raw = problem.get("unsafe", defaults.get("unsafe"))
    if unsafe_raw is None:
        raise ConfigError("problem.unsafe is required")
    if isinstance(unsafe_raw, dict):
        unsafe_raw = [unsafe_raw]
    unsafe_exprs = [u["expr"] for u in unsafe_raw]

    i_values = problem.get("i_values")
    if i_values is None:
        rng = problem.get("i_range")
        if rng is None:
            rng = next((u.get("i_range") for u in unsafe_raw if "i_range" in u), None)
        if rng is None:
            i_values = [0]
        else:
            lo, hi = int(rng[0]), int(rng[1])
            if hi < lo:
                raise ConfigError("i_range must be a non-empty integer interval")
            i_values = list(range(lo, hi + 1))

    h = float(problem.get("h", horizon_defaults.get("h", training.get("h", 0.1))))
    horizon = float(problem.get("T", horizon_defaults.get("T", training.get("T_train", 1.0))))
    out_dir = Path(raw.get("output_dir", path.parent / "out"))
    model_file = Path(raw.get("model_file", out_dir / "model.json"))

    return RunConfig(
        path=path,
        builtin=builtin,
        snapshot_csv=csv_paths,
        var_names=var_names,
        dictionary_spec=dict_spec,
        n_traj=int(training.get("n_traj", 10_000)),
        train_h=float(training.get("h", h)),
        train_horizon=float(training.get("T_train", horizon)),
        truncation=dict(training.get("truncation", {})),
        init=[[float(a), float(b)] for a, b in init],
        unsafe_exprs=unsafe_exprs,
        i_values=[int(i) for i in i_values],
        horizon=horizon,
        algorithm=str(problem.get("algorithm", "zono_split")),
        max_level=int(problem.get("max_level", 2)),
        delta=float(problem.get("delta", DEFAULT_DELTA)),
        split_contract_late=bool(problem.get("split_contract_late", False)),
        plot_dims=tuple(problem.get("plot_dims", (0, 1))),
        output_dir=out_dir,
        model_file=model_file,
        raw=raw,
    )


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dictionary_for(config: RunConfig, dim: int):
    spec = config.dictionary_spec
    if spec is None:
        if config.builtin == "quartic_decay":
            return quartic_lift_dictionary()
        raise ConfigError("a dictionary spec is required for this model source")
    trig = spec.get("trig", {})
    return build_dictionary(
        dim,
        int(spec["max_poly_degree"]),
        a_max=int(trig.get("a_max", 0)),
        b_max=int(trig.get("b_max", 0)),
    )


def _fit_model(config: RunConfig):
    init_box = IntervalBox.from_bounds(config.init)
    if config.builtin:
        ode = builtin_model(config.builtin)
        log.info("generating %d trajectories of %s", config.n_traj, config.builtin)
        data = generate_snapshots(ode, init_box, config.n_traj, config.train_h, config.train_horizon)
    else:
        data = load_snapshots_csv(config.snapshot_csv)
    d = _dictionary_for(config, data.dim)
    log.info("fitting EDMD: %d observables over %d snapshot pairs", d.size, data.n_pairs)
    return fit_edmd(
        d,
        data,
        rank=config.truncation.get("rank"),
        energy=config.truncation.get("energy"),
    )


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(config: RunConfig) -> int:
    if not config.builtin:
        raise ConfigError("simulate requires a builtin model")
    ode = builtin_model(config.builtin)
    init_box = IntervalBox.from_bounds(config.init)
    seeds = sobol_points(init_box, config.n_traj)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for k, x0 in enumerate(seeds):
        traj = integrate(ode, x0, config.train_h, config.train_horizon)
        name = f"trajectory_{k:04d}.csv"
        tmp = config.output_dir / (name + ".tmp")
        save_trajectory_csv(traj, k, tmp)
        os.replace(tmp, config.output_dir / name)
        files.append(name)
    manifest = {
        "model": config.builtin,
        "n_traj": config.n_traj,
        "h": config.train_h,
        "T_train": config.train_horizon,
        "init": config.init,
        "files": files,
    }
    _atomic_write(config.output_dir / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(files)} trajectories to {config.output_dir}")
    return EXIT_OK


def _error_report_rows(config: RunConfig, model) -> list[dict]:
    """Linearization error at time fractions over corner+center starts."""
    if not config.builtin:
        raise ConfigError("the error report requires a builtin (integrable) model")
    ode = builtin_model(config.builtin)
    init_box = IntervalBox.from_bounds(config.init)
    corners = np.array(
        np.meshgrid(*[[lo, hi] for lo, hi in config.init], indexing="ij")
    ).reshape(len(config.init), -1).T
    points = np.vstack([corners, init_box.mids])

    horizon = config.horizon
    h = model.h
    n_steps = int(round(horizon / h))
    rows = []
    truths = [integrate(ode, x0, h, horizon).states for x0 in points]
    preds = [model.predict_states(x0, n_steps) for x0 in points]
    for frac in (0.2, 0.4, 0.6, 0.8, 1.0):
        idx = int(round(frac * n_steps))
        abs_errs, rel_errs = [], []
        for truth, pred in zip(truths, preds):
            err = float(np.linalg.norm(pred[idx] - truth[idx]))
            abs_errs.append(err)
            rel_errs.append(err / max(float(np.linalg.norm(truth[idx])), 1e-300))
        rows.append(
            {
                "time_frac": frac,
                "max_abs": max(abs_errs),
                "avg_abs": float(np.mean(abs_errs)),
                "max_rel": max(rel_errs),
                "avg_rel": float(np.mean(rel_errs)),
            }
        )
    return rows


def cmd_linearize(config: RunConfig) -> int:
    model = _fit_model(config)
    config.model_file.parent.mkdir(parents=True, exist_ok=True)
    tmp = config.model_file.with_name(config.model_file.name + ".tmp")
    save_model(model, tmp)
    os.replace(tmp, config.model_file)
    print(f"model: {config.model_file} (residual {model.meta['residual']:.3e})")
    if config.builtin:
        rows = _error_report_rows(config, model)
        out = config.output_dir / "error_report.csv"
        lines = ["time_frac,max_abs,avg_abs,max_rel,avg_rel"]
        for r in rows:
            lines.append(
                f"{r['time_frac']},{r['max_abs']:.6e},{r['avg_abs']:.6e},"
                f"{r['max_rel']:.6e},{r['avg_rel']:.6e}"
            )
        _atomic_write(out, "\n".join(lines) + "\n")
        print(f"error report: {out}")
    return EXIT_OK


def _build_problem(config: RunConfig, model, i: int, external_solver: str | None):
    names = config.var_names or [f"x{k+1}" for k in range(model.state_dim)]
    halfspaces = tuple(parse_template(e, names).instantiate(i) for e in config.unsafe_exprs)
    ode = builtin_model(config.builtin) if config.builtin else None
    return VerificationProblem(
        model=model,
        init=IntervalBox.from_bounds(config.init),
        unsafe=UnsafeSet(halfspaces),
        horizon=config.horizon,
        algorithm=config.algorithm,
        max_level=config.max_level,
        delta=config.delta,
        split_contract_late=config.split_contract_late,
        ode=ode,
        external_solver=external_solver,
    )


def _verify_instance(config_path: str, i: int, external_solver: str | None) -> dict:
    config = load_config(config_path)
    model = load_model(config.model_file)
    problem = _build_problem(config, model, i, external_solver)
    start = time.perf_counter()
    verdict = verify(problem)
    runtime = time.perf_counter() - start
    doc = {
        "model": config.model_name,
        "algorithm": config.algorithm,
        "i": i,
        "kind": verdict.kind,
        "step": verdict.step,
        "witness": None if verdict.witness_x0 is None else [float(v) for v in verdict.witness_x0],
        "runtime_s": runtime,
        "solver_calls": verdict.solver_calls,
        "splits": verdict.splits,
        "delta": problem.delta,
        "validation": None,
    }
    if verdict.kind == "unsafe":
        report = validate_counterexample(problem, verdict)
        doc["validation"] = {
            "linear_in_unsafe": report.linear_in_unsafe,
            "linear_slacks": report.linear_slacks,
            "blackbox_in_unsafe": report.blackbox_in_unsafe,
            "blackbox_slacks": report.blackbox_slacks,
            "state_discrepancy": report.state_discrepancy,
            "integration_failure": report.integration_failure,
        }
    return doc


def cmd_verify(config: RunConfig, plot: bool = False, external_solver: str | None = None, jobs: int = 1) -> int:
    if not config.model_file.exists():
        log.info("no model file at %s; fitting now", config.model_file)
        rc = cmd_linearize(config)
        if rc != EXIT_OK:
            return rc
    model = load_model(config.model_file)

    results = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_verify_instance, str(config.path), i, external_solver)
                for i in config.i_values
            ]
            results = [f.result() for f in futures]
    else:
        results = [_verify_instance(str(config.path), i, external_solver) for i in config.i_values]

    config.output_dir.mkdir(parents=True, exist_ok=True)
    for doc in results:
        name = f"verdict_{doc['model']}_{doc['algorithm']}_i{doc['i']:03d}.json"
        _atomic_write(config.output_dir / name, json.dumps(doc, indent=1, sort_keys=True) + "\n")
        print(
            f"i={doc['i']:3d}  {doc['kind']:7s} step={doc['step']}  "
            f"solver_calls={doc['solver_calls']}  splits={doc['splits']}  "
            f"runtime={doc['runtime_s']:.3f}s"
        )

    stats_lines = ["model,algorithm,i,kind,step,runtime_s,solver_calls,splits"]
    for doc in results:
        stats_lines.append(
            f"{doc['model']},{doc['algorithm']},{doc['i']},{doc['kind']},"
            f"{'' if doc['step'] is None else doc['step']},{doc['runtime_s']:.6f},"
            f"{doc['solver_calls']},{doc['splits']}"
        )
    _atomic_write(config.output_dir / "stats.csv", "\n".join(stats_lines) + "\n")

    if plot:
        from .plot import write_reach_plot

        for i in config.i_values:
            problem = _build_problem(config, model, i, None)
            svg = config.output_dir / f"reach_i{i:03d}.svg"
            tmp = svg.with_name(svg.name + ".tmp")
            write_reach_plot(
                tmp, model, problem.initial_box(), problem.unsafe, problem.n_steps,
                dims=config.plot_dims,
            )
            os.replace(tmp, svg)
    return EXIT_OK


def cmd_report(results_dir) -> int:
    results_dir = Path(results_dir)
    docs = []
    for f in sorted(results_dir.glob("verdict_*.json")):
        docs.append(json.loads(f.read_text(encoding="utf-8")))
    if not docs:
        print(f"no verdict files in {results_dir}", file=sys.stderr)
        return EXIT_CONFIG

    by_instance: dict[tuple, set] = {}
    for d in docs:
        by_instance.setdefault((d["model"], d["i"]), set()).add(d["kind"])
    rows = []
    for d in sorted(docs, key=lambda d: (d["model"], d["i"], d["algorithm"])):
        flag = "DISAGREE" if len(by_instance[(d["model"], d["i"])]) > 1 else ""
        rows.append(
            (d["model"], d["i"], d["algorithm"], d["kind"],
             "" if d["step"] is None else d["step"],
             f"{d['runtime_s']:.3f}", d["solver_calls"], flag)
        )

    header = ("model", "i", "algorithm", "kind", "step", "runtime_s", "solver_calls", "flag")
    widths = [max(len(str(r[k])) for r in [header] + rows) for k in range(len(header))]
    lines = ["  ".join(str(v).ljust(w) for v, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))
    table = "\n".join(lines) + "\n"

    _atomic_write(results_dir / "report.txt", table)
    csv_lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    _atomic_write(results_dir / "report.csv", "\n".join(csv_lines) + "\n")
    print(table, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _setup_logging() -> None:
    level = os.environ.get("KOOPMAN_REACH_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="koopman-reach",
        description="Koopman-linearized safety verification of nonlinear ODE systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("simulate", "linearize", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON, version 1)")
        if name == "verify":
            p.add_argument("--plot", action="store_true", help="write per-instance reach SVGs")
            p.add_argument("--external-solver", default=None, metavar="CMD",
                           help="pipe SMT-LIB text to this solver command instead of the internal one")
            p.add_argument("--jobs", type=int, default=1, help="parallel sweep instances")

    p_rep = sub.add_parser("report")
    p_rep.add_argument("--results", required=True, help="directory of verdict_*.json files")

    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.results)
        config = load_config(args.config)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "linearize":
            return cmd_linearize(config)
        return cmd_verify(
            config, plot=args.plot, external_solver=args.external_solver, jobs=args.jobs
        )
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FitError as err:
        print(f"fit error: {err}", file=sys.stderr)
        return EXIT_FIT
    except Exception as err:  # pragma: no cover - defensive
        log.exception("internal error")
        print(f"internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
