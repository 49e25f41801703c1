"""
Command-line front end.

Subcommands: ``run``, ``truncation-study``, ``convergence``, ``sweep`` and
``validate``. Exit codes:

* 0  success
* 1  configuration error
* 2  solver failure
* 3  invariant violation

Every failure prints one line of the form
``ddrobin: exit=<code> kind=<kind> reason=<text>`` on stderr.

The output root can be redirected with ``DDROBIN_OUTPUT_ROOT``; relative
output directories are then resolved against it.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ConfigError, RunConfig, load
from .diagnostics import Flag, gronwall_envelope
from .grid import Grid1D
from .presets import build_model, small_data_report
from .solver import SimulationError, SolverError, StepParams, n_steps_for, simulate
from .studies import heat_spatial_order, heat_temporal_order, robin_poisson_order, truncation_study

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_INVARIANT = 3

_KIND = {EXIT_CONFIG: "config", EXIT_SOLVER: "solver", EXIT_INVARIANT: "invariant"}

OUTPUT_ROOT_ENV = "DDROBIN_OUTPUT_ROOT"

SPECIES_COLUMNS = {
    "l1": "L1 norm of the density (cell sum times cell volume)",
    "l2": "L2 norm of the density",
    "min": "minimum cell value",
    "neg_l1": "L1 norm of the negative part",
    "above_k_l1": "L1 norm of (u - k)^+ with k the flux height",
    "mass": "integral of the density",
    "budget_residual": "tau (mass change) - dt (boundary flux integral) for the last step",
    "energy_residual": "relative residual of the discrete energy identity for the last step",
}

GLOBAL_COLUMNS = {
    "t": "time",
    "step": "step index",
    "picard_iterations": "Picard iterations of the last step (0 for the initial row)",
    "V_w1inf": "max |V| + max |grad V| (discrete)",
    "V_trace_max": "max |V| over boundary faces",
    "V_w21": "discrete W^{2,1} norm of V",
    "mass_budget_residual": "largest per-species mass budget residual of the step",
    "energy_balance_residual": "largest per-species energy residual of the step",
    "flags": "semicolon-separated set of raised flags, empty if the step passed",
}

OTHER_SCHEMAS = {
    "truncation.csv": {
        "p": "truncation level of sigma_p",
        "max_difference": "max over steps, species and cells of |u_p - u|",
        "max_density": "largest density reached by the sigma_p run",
    },
    "convergence.csv": {
        "h": "mesh width (space study) or time step (time study)",
        "resolution": "number of cells (space) or time steps (time)",
        "error": "max-norm error against the exact solution",
    },
}


# ---------------------------------------------------------------------------
# formatting helpers
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    """Shortest round-trip decimal, locale independent."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _one_line(text) -> str:
    return " ".join(str(text).split())


def report_failure(code: int, reason: str, stream=None) -> int:
    stream = sys.stderr if stream is None else stream
    print(f"ddrobin: exit={code} kind={_KIND.get(code, 'unknown')} reason={_one_line(reason)}", file=stream)
    return code


def resolve_output_dir(out: str | None, config: RunConfig | None = None) -> Path:
    base = Path(out if out is not None else (config.output_dir if config is not None else "out"))
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not base.is_absolute():
        base = Path(root) / base
    return base


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def trajectory_header(model) -> list[str]:
    head = ["t", "step", "picard_iterations"]
    for sp in model.species:
        head += [f"{sp.name}_{c}" for c in SPECIES_COLUMNS]
    return head + [c for c in GLOBAL_COLUMNS if c not in ("t", "step", "picard_iterations")]


def trajectory_row(rec) -> list:
    row = [rec.t, rec.step, rec.picard_iterations]
    for s in rec.species:
        row += [s.l1_norm, s.l2_norm, s.min_value, s.negative_part_l1, s.above_height_l1, s.mass,
                s.mass_budget_residual, s.energy_balance_residual]
    row += [rec.w1inf_norm, rec.boundary_trace_max, rec.w21_norm, rec.mass_budget_residual,
            rec.energy_balance_residual, ";".join(sorted(f.value for f in rec.flags))]
    return row


def run_schema(model) -> dict:
    traj = {c: GLOBAL_COLUMNS[c] for c in ("t", "step", "picard_iterations")}
    for sp in model.species:
        for c, desc in SPECIES_COLUMNS.items():
            traj[f"{sp.name}_{c}"] = f"{desc} (species {sp.name})"
    for c, desc in GLOBAL_COLUMNS.items():
        traj.setdefault(c, desc)
    final = {"x": "cell-centre x coordinate"}
    if model.grid.dim == 2:
        final["y"] = "cell-centre y coordinate"
    for sp in model.species:
        final[sp.name] = f"final density of species {sp.name}"
    final["V"] = "final potential"
    return {"trajectory.csv": traj, "final_state.csv": final}


def write_final_state(path: Path, model, state) -> None:
    grid = model.grid
    if isinstance(grid, Grid1D):
        cols = [grid.cell_centers]
        head = ["x"]
    else:
        X, Y = grid.meshgrid()
        cols = [X.ravel(), Y.ravel()]
        head = ["x", "y"]
    cols += [np.ravel(u) for u in state.densities] + [np.ravel(state.potential.values)]
    head += [sp.name for sp in model.species] + ["V"]
    write_csv(path, head, zip(*cols))


def invariant_summary(trajectory) -> dict:
    recs = [r for _, r in trajectory]
    counts = {f.value: sum(f in r.flags for r in recs) for f in Flag}
    species = [r.species for r in recs]
    out = {
        "flag_counts": counts,
        "rows": len(recs),
        "min_density": min(min(s.min_value for s in sp) for sp in species),
        "max_negative_part_l1": max(max(s.negative_part_l1 for s in sp) for sp in species),
        "max_above_height_l1": max(max(s.above_height_l1 for s in sp) for sp in species),
        "max_abs_mass_budget_residual": max(abs(r.mass_budget_residual) for r in recs),
        "max_abs_energy_residual": max(abs(r.energy_balance_residual) for r in recs),
        "max_picard_iterations": max(r.picard_iterations for r in recs),
    }
    if len(recs) >= 3:
        t = [r.t for r in recs]
        fits = {}
        for i in range(len(recs[0].species)):
            l1 = [r.species[i].l1_norm for r in recs]
            l2sq = [r.species[i].l2_norm ** 2 for r in recs]
            if min(l1) > 0:
                f = gronwall_envelope(t, l1)
                fits[f"species{i}_l1"] = {"A": f.A, "B": f.B}
            if min(l2sq) > 0:
                f = gronwall_envelope(t, l2sq)
                fits[f"species{i}_l2_squared"] = {"A": f.A, "B": f.B}
        out["envelopes"] = fits
    return out


def execute_run(config: RunConfig, out_dir: Path) -> tuple[int, str]:
    """Run ``config`` and write its outputs to ``out_dir``.

    Returns ``(exit_code, reason)``; ``reason`` is empty on success.
    """
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        model = build_model(config)
    except ConfigError as exc:
        return EXIT_CONFIG, str(exc)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = StepParams(config.dt, config.picard_tol, config.picard_max_iter)
    tic = time.perf_counter()
    code, reason = EXIT_OK, ""
    try:
        trajectory = simulate(model, params, config.T, config.cadence)
    except SimulationError as exc:
        trajectory = exc.trajectory
        code, reason = EXIT_SOLVER, f"{type(exc.cause).__name__}: {exc}"
    wall = time.perf_counter() - tic

    flagged = [r for _, r in trajectory if r.flags]
    if code == EXIT_OK and flagged:
        first = flagged[0]
        code = EXIT_INVARIANT
        reason = f"{','.join(sorted(f.value for f in first.flags))} at step {first.step} (t={first.t!r})"

    write_csv(out_dir / "trajectory.csv", trajectory_header(model), (trajectory_row(r) for _, r in trajectory))
    last_valid = next(
        (s for s, r in reversed(trajectory) if not r.flags & {Flag.NEGATIVITY, Flag.PICARD_FAIL}),
        trajectory[0][0],
    )
    write_final_state(out_dir / "final_state.csv", model, last_valid)
    meta = {
        "version": __version__,
        "config": config.to_dict(),
        "started_at": started,
        "wall_time_s": wall,
        "n_steps_planned": n_steps_for(config.T, config.dt),
        "final_step": last_valid.step_index,
        "final_t": last_valid.t,
        "exit_code": code,
        "reason": reason,
        "invariants": invariant_summary(trajectory),
    }
    if config.preset == "self-grav":
        meta["small_data"] = small_data_report(config)
    write_json(out_dir / "run.json", meta)
    write_json(out_dir / "schema.json", run_schema(model))
    return code, reason


def _load_config(path) -> RunConfig:
    if path is None:
        raise ConfigError("--config is required")
    return load(path)


def cmd_run(args) -> int:
    try:
        config = _load_config(args.config)
    except ConfigError as exc:
        return report_failure(EXIT_CONFIG, exc)
    out = resolve_output_dir(args.out, config)
    code, reason = execute_run(config, out)
    if code:
        return report_failure(code, reason)
    print(f"ok output={out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# truncation study
# ---------------------------------------------------------------------------


def parse_int_list(text: str | None, name: str) -> list[int]:
    if text is None:
        return []
    try:
        return [int(tok) for tok in text.replace(" ", "").split(",") if tok]
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of integers, got {text!r}") from None


def cmd_truncation_study(args) -> int:
    try:
        config = _load_config(args.config)
        p_list = parse_int_list(args.p_list, "--p-list")
        if not p_list:
            raise ConfigError("--p-list is empty")
        if any(p < 1 for p in p_list):
            raise ConfigError("--p-list entries must be >= 1")
        model = build_model(config)
    except ConfigError as exc:
        return report_failure(EXIT_CONFIG, exc)
    params = StepParams(config.dt, config.picard_tol, config.picard_max_iter)
    try:
        study = truncation_study(model, params, config.T, p_list)
    except SimulationError as exc:
        return report_failure(EXIT_SOLVER, f"{type(exc.cause).__name__}: {exc}")
    out = resolve_output_dir(args.out, config)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(r.p, r.max_difference, r.max_density) for r in study.rows]
    write_csv(out / "truncation.csv", ["p", "max_difference", "max_density"], rows)
    write_json(out / "schema.json", {"truncation.csv": OTHER_SCHEMAS["truncation.csv"]})
    write_json(out / "truncation.json", {
        "config": config.to_dict(),
        "base_max_density": study.base_max_density,
        "nonincreasing": study.nonincreasing,
        "exact_above_max": study.exact_above_max,
    })
    print("p,max_difference,max_density")
    for row in rows:
        print(",".join(fmt(v) for v in row))
    print(f"base_max_density={fmt(study.base_max_density)}")
    if not study.nonincreasing:
        return report_failure(EXIT_INVARIANT, "max difference increases with p")
    if not study.exact_above_max:
        return report_failure(EXIT_INVARIANT, "nonzero difference for p above the max density")
    return EXIT_OK


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------

ORACLES = ("heat-neumann", "robin-poisson")
SPACE_ORDER_MIN = 1.8
TIME_ORDER_MIN = 0.8


def run_convergence(config: RunConfig, resolutions: list[int]):
    """Returns ``(study, threshold, variable)``."""
    p = config.params
    if config.preset not in ORACLES:
        raise ConfigError(f"convergence needs preset in {ORACLES}, got {config.preset!r}")
    if len(set(resolutions)) < 2:
        raise ConfigError("need at least two distinct resolutions to fit an order")
    if any(r < 2 for r in resolutions):
        raise ConfigError("resolutions must be >= 2")
    resolutions = sorted(set(resolutions))
    if config.preset == "robin-poisson":
        kw = {k: p[k] for k in ("A0", "A1", "lam", "convention") if k in p}
        try:
            return robin_poisson_order(resolutions, **kw), SPACE_ORDER_MIN, "space"
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    modes = tuple(float(m) for m in p.get("modes", (1.0, 1.0)))
    variable = p.get("variable", "space")
    if variable == "space":
        study = heat_spatial_order(resolutions, T=config.T, modes=modes, dt_factor=float(p.get("dt_factor", 0.25)))
        return study, SPACE_ORDER_MIN, variable
    if variable == "time":
        n_cells = int(config.resolution)
        dts = [config.T / n for n in resolutions]
        return heat_temporal_order(dts, n_cells=n_cells, T=config.T, modes=modes), TIME_ORDER_MIN, variable
    raise ConfigError(f"params.variable must be 'space' or 'time', got {variable!r}")


def cmd_convergence(args) -> int:
    try:
        config = _load_config(args.config)
        res = parse_int_list(args.resolutions, "--resolutions") if args.resolutions is not None else [16, 32, 64]
        study, threshold, variable = run_convergence(config, res)
    except ConfigError as exc:
        return report_failure(EXIT_CONFIG, exc)
    except SimulationError as exc:
        return report_failure(EXIT_SOLVER, exc)
    out = resolve_output_dir(args.out, config)
    out.mkdir(parents=True, exist_ok=True)
    resolved = sorted(set(res))
    rows = list(zip(study.h, resolved, study.errors))
    write_csv(out / "convergence.csv", ["h", "resolution", "error"], rows)
    write_json(out / "schema.json", {"convergence.csv": OTHER_SCHEMAS["convergence.csv"]})
    write_json(out / "convergence.json", {
        "config": config.to_dict(), "variable": variable, "order": study.order, "threshold": threshold,
    })
    for row in rows:
        print(",".join(fmt(v) for v in row))
    print(f"order={fmt(study.order)} variable={variable}")
    if not study.order >= threshold:
        return report_failure(EXIT_INVARIANT, f"{variable} order {study.order:.3f} < {threshold}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def parse_grid(items) -> dict:
    grid = {}
    for item in items or []:
        name, sep, values = item.partition("=")
        name = name.strip()
        if not sep or not name:
            raise ConfigError(f"--grid expects name=v1,v2,..., got {item!r}")
        parsed = [yaml.safe_load(v) for v in values.split(",") if v.strip()]
        if not parsed:
            raise ConfigError(f"--grid {name} has no values")
        if name in grid:
            raise ConfigError(f"--grid {name} given twice")
        grid[name] = parsed
    return grid


def _sweep_point(config_dict: dict, overrides: dict, out_dir: str) -> tuple[int, str]:
    try:
        config = RunConfig.from_dict(config_dict).with_overrides(overrides)
    except ConfigError as exc:
        return EXIT_CONFIG, str(exc)
    try:
        return execute_run(config, Path(out_dir))
    except (SolverError, ValueError, ArithmeticError) as exc:
        return EXIT_SOLVER, f"{type(exc).__name__}: {exc}"


STATUS = {EXIT_OK: "ok", EXIT_CONFIG: "config_error", EXIT_SOLVER: "solver_failure", EXIT_INVARIANT: "invariant_violation"}


def cmd_sweep(args) -> int:
    try:
        config = _load_config(args.config)
        grid = parse_grid(args.grid)
        if not grid:
            raise ConfigError("empty parameter grid")
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        return report_failure(EXIT_CONFIG, exc)
    out = resolve_output_dir(args.out, config)
    out.mkdir(parents=True, exist_ok=True)
    names = list(grid)
    points = [dict(zip(names, combo)) for combo in itertools.product(*grid.values())]
    dirs = [out / f"point_{k:04d}" for k in range(len(points))]
    base = config.to_dict()
    jobs = args.jobs or os.cpu_count() or 1
    if jobs == 1:
        results = [_sweep_point(base, pt, str(d)) for pt, d in zip(points, dirs)]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(points))) as pool:
            futures = [pool.submit(_sweep_point, base, pt, str(d)) for pt, d in zip(points, dirs)]
            results = [f.result() for f in futures]
    rows = [
        [k, *(pt[n] for n in names), STATUS[code], code, d.name, _one_line(reason)]
        for k, (pt, d, (code, reason)) in enumerate(zip(points, dirs, results))
    ]
    write_csv(out / "index.csv", ["point", *names, "status", "exit_code", "directory", "reason"], rows)
    write_json(out / "schema.json", {"index.csv": {
        "point": "grid point number",
        **{n: f"value of {n} at this point" for n in names},
        "status": "ok | config_error | solver_failure | invariant_violation",
        "exit_code": "exit code the point would have as a single run",
        "directory": "output subdirectory of the point",
        "reason": "failure reason, empty on success",
    }})
    failed = [(k, c, r) for k, (c, r) in enumerate(results) if c]
    print(f"points={len(points)} failed={len(failed)} index={out / 'index.csv'}")
    if failed:
        code = max(c for _, c, _ in failed)
        return report_failure(code, f"{len(failed)} of {len(points)} points failed; first: point {failed[0][0]}: {failed[0][2]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        config = _load_config(args.config)
        model = build_model(config)
    except ConfigError as exc:
        return report_failure(EXIT_CONFIG, exc)
    print(f"ok preset={config.preset} species={','.join(s.name for s in model.species)} "
          f"cells={model.grid.size} steps={n_steps_for(config.T, config.dt)}")
    if config.preset == "self-grav":
        rep = small_data_report(config)
        print(" ".join(f"{k}={fmt(v)}" for k, v in rep.items()))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddrobin", description="Drift-diffusion systems with Robin boundary fluxes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        p.set_defaults(func=func)
        return p

    add("run", cmd_run, "run one simulation")
    p = add("truncation-study", cmd_truncation_study, "compare sigma against sigma_p")
    p.add_argument("--p-list", default="2,4,8,16", help="comma-separated truncation levels")
    p = add("convergence", cmd_convergence, "fit the observed order against an exact solution")
    p.add_argument("--resolutions", default=None, help="comma-separated cell counts (default 16,32,64)")
    p = add("sweep", cmd_sweep, "run a parameter grid")
    p.add_argument("--grid", action="append", metavar="NAME=V1,V2", help="dotted config path and values")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    add("validate", cmd_validate, "check a configuration without running it")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
