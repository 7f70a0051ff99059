"""Command-line front end.

Exit status: 0 success, 1 failed checks, 2 malformed scenario or invalid
arguments, 3 unknown model or check name, 4 solver failure.  Errors are
also emitted as a one-line JSON record on stderr (and ``error.json`` in the
output directory when one is known).
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import time
from pathlib import Path

import numpy as np

from fplab import __version__
from fplab import io as fio
from fplab.errors import DegenerateDensity, LinearSolveFailure, NonConvergence
from fplab.grid import ScalarField
from fplab.model import registered_models
from fplab.particles import DensityEstimator, simulate
from fplab.pde import Trajectory, step_sizes
from fplab.pde import self_convergence, solve_mild, solve_regularized
from fplab.scenario import Scenario, ScenarioError, UnknownModel, dump_scenario, load_scenario

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_UNKNOWN, EXIT_SOLVER = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **detail):
        super().__init__(message)
        self.code, self.kind, self.detail = code, kind, detail


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise CliError(EXIT_INVALID, "invalid-argument", f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _key_line(path: Path, message: str) -> str:
    m = re.search(r"unknown key '([^']+)'", message)
    if not m:
        return message
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if re.match(rf"\s*{re.escape(m.group(1))}\s*=", line):
            return f"{message} (at line {lineno})"
    return message


def _scenario(args) -> Scenario:
    path = Path(args.scenario)
    overrides = _overrides(args.set)
    if args.output:
        overrides["output"] = args.output
    try:
        s = load_scenario(path, overrides)
    except FileNotFoundError:
        raise CliError(EXIT_INVALID, "invalid-argument", f"scenario file not found: {path}") from None
    except ScenarioError as exc:
        raise CliError(EXIT_INVALID, "malformed-scenario", _key_line(path, str(exc))) from None
    try:
        s.model_problem()
    except UnknownModel:
        raise CliError(EXIT_UNKNOWN, "unknown-model", f"unknown model {s.model!r}",
                       registry=registered_models(), output=s.output) from None
    return s


def _manifest(out: Path, s: Scenario, command: str, **extra) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.toml").write_text(dump_scenario(s))
    data = {"command": command, "version": __version__, "scenario": s.to_dict()}
    data.update(extra)
    (out / "manifest.json").write_text(json.dumps(data, indent=2))


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, default=_jsonable))


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))


def cmd_run_pde(args) -> int:
    s = _scenario(args)
    out = Path(s.output)
    model = s.model_problem()
    u0 = ScalarField.from_function(s.grid(), s.initial_condition())
    cfg = s.solver_config()
    t0 = time.perf_counter()
    try:
        solver = solve_regularized if (s.epsilon_reg or s.mollifier_width) else solve_mild
        traj = solver(u0, s.T, model, cfg)
    except NonConvergence as exc:
        raise CliError(EXIT_SOLVER, "non-convergence", str(exc), step=exc.step_index, output=str(out)) from None
    runtime = time.perf_counter() - t0
    _manifest(out, s, "run-pde")
    fio.write_trajectory(out / "trajectory", traj)
    fio.write_field_csv(out / "final.csv", traj.final)
    masses = traj.masses()
    summary = {
        "model": model.name,
        "steps": traj.meta["steps"],
        "snapshots": len(traj),
        "mass_initial": masses[0],
        "mass_drift": float(np.max(np.abs(masses - masses[0])) / abs(masses[0])),
        "max_abs_u": float(np.max(traj.sup_norms())),
        "runtime_s": runtime,
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_run_particles(args) -> int:
    s = _scenario(args)
    out = Path(s.output)
    model = s.model_problem()
    grid = s.grid()
    u0 = ScalarField.from_function(grid, s.initial_condition())
    bw = "auto" if s.bandwidth == "auto" else float(s.bandwidth)
    est = DensityEstimator(grid, s.estimator, bw)
    steps = step_sizes(s.T, s.particle_dt)
    times = [0.0] + [s.T if i == len(steps) - 1 else (i + 1) * s.particle_dt for i in range(len(steps))]
    snap = [t for i, t in enumerate(times) if i % s.snapshot_stride == 0 or i == len(times) - 1]
    t0 = time.perf_counter()
    try:
        snapshots, ens = simulate(u0, s.T, s.particle_dt, s.particles, s.seed, model, est, snap,
                                  return_ensemble=True)
    except DegenerateDensity as exc:
        raise CliError(EXIT_SOLVER, "degenerate-density", str(exc), output=str(out)) from None
    runtime = time.perf_counter() - t0
    _manifest(out, s, "run-particles")
    traj = Trajectory(grid, np.array([t for t, _ in snapshots]), [f.values for _, f in snapshots], model.name,
                      meta={"particles": s.particles, "seed": s.seed, "estimator": s.estimator})
    fio.write_trajectory(out / "densities", traj)
    fio.write_particles(out / "particles.bin", ens.positions)
    summary = {"model": model.name, "particles": s.particles, "seed": s.seed,
               "times": list(traj.times), "mass": [float(m) for m in traj.masses()]}
    if s.reference:
        ref = fio.read_trajectory(Path(s.reference) / "trajectory")
        if ref.grid != grid:
            raise CliError(EXIT_INVALID, "invalid-argument", "reference run uses a different grid")
        dist = []
        for t, f in snapshots:
            i = int(np.argmin(np.abs(ref.times - t)))
            dist.append(grid.norm(f.values - ref.fields[i], 1) if abs(ref.times[i] - t) < 1e-9 else None)
        summary["l1_to_reference"] = dist
        with open(out / "distances.csv", "w") as fh:
            fh.write("time,l1_distance\n")
            for (t, _), d in zip(snapshots, dist):
                fh.write(f"{fio.FLOAT_FMT % t},{'' if d is None else fio.FLOAT_FMT % d}\n")
    _write_json(out / "summary.json", summary)
    _write_json(out / "timing.json", {"runtime_s": runtime})
    print(json.dumps({k: summary[k] for k in ("model", "particles", "seed")}))
    return EXIT_OK


def cmd_run_verify(args) -> int:
    from fplab.suite import CHECKS, run_checks

    s = _scenario(args)
    names = list(CHECKS) if args.checks is None else [c.strip() for c in args.checks.split(",") if c.strip()]
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise CliError(EXIT_UNKNOWN, "unknown-check", f"unknown check(s): {', '.join(unknown)}",
                       registry=list(CHECKS))
    out = Path(s.output)
    try:
        reports = run_checks(s, names)
    except (NonConvergence, LinearSolveFailure) as exc:
        raise CliError(EXIT_SOLVER, type(exc).__name__, str(exc), output=str(out)) from None
    _manifest(out, s, "run-verify", checks=names)
    fio.write_reports(out, reports)
    for r in reports:
        print(r)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


def cmd_convergence(args) -> int:
    s = _scenario(args)
    h_list = [float(h) for h in args.h_list.split(",")] if args.h_list else [4 * s.h, 2 * s.h, s.h]
    u0 = ScalarField.from_function(s.grid(), s.initial_condition())
    try:
        study = self_convergence(u0, s.T, s.model_problem(), h_list, s.solver_config())
    except ValueError as exc:
        raise CliError(EXIT_INVALID, "invalid-argument", str(exc)) from None
    except NonConvergence as exc:
        raise CliError(EXIT_SOLVER, "non-convergence", str(exc)) from None
    out = Path(s.output)
    _manifest(out, s, "convergence", h_list=h_list)
    with open(out / "convergence.csv", "w") as fh:
        fh.write("h_coarse,h_fine,l1_distance\n")
        for a, b, d in zip(h_list, h_list[1:], study.distances):
            fh.write(",".join(fio.FLOAT_FMT % v for v in (a, b, d)) + "\n")
    _write_json(out / "summary.json", {"distances": study.distances, "fitted_order": study.fitted_order})
    print(json.dumps({"distances": study.distances.tolist(), "fitted_order": study.fitted_order}))
    return EXIT_OK


def _stored(run: str, subdir: str | None) -> Trajectory:
    root = Path(run)
    candidates = [subdir] if subdir else ["trajectory", "densities"]
    for name in candidates:
        if (root / name / "trajectory.json").is_file():
            return fio.read_trajectory(root / name)
    raise CliError(EXIT_INVALID, "invalid-argument", f"no stored trajectory under {root}")


def cmd_compare(args) -> int:
    a, b = _stored(args.run_a, args.subdir), _stored(args.run_b, args.subdir)
    if a.grid != b.grid or len(a) != len(b) or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise CliError(EXIT_INVALID, "mismatch", "runs differ in grid or snapshot times")
    lines = ["time,l1_distance"]
    for t, fa, fb in zip(a.times, a.fields, b.fields):
        lines.append(f"{fio.FLOAT_FMT % t},{fio.FLOAT_FMT % a.grid.norm(fa - fb, 1)}")
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fplab", description="Nonlinear Fokker-Planck laboratory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("scenario", help="flat TOML scenario file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario key")
        sp.add_argument("--output", help="output directory (overrides 'output')")
        sp.set_defaults(func=fn)
        return sp

    scenario_cmd("run-pde", cmd_run_pde, "run the implicit PDE solver")
    scenario_cmd("run-particles", cmd_run_particles, "run the McKean-Vlasov particle system")
    sp = scenario_cmd("run-verify", cmd_run_verify, "run verification checks")
    sp.add_argument("--checks", help="comma-separated check names (default: all)")
    sp = scenario_cmd("convergence", cmd_convergence, "self-convergence study in h")
    sp.add_argument("--h-list", help="comma-separated step sizes, each half the previous")
    sp = sub.add_parser("compare", help="L1 distance between two stored runs")
    sp.add_argument("run_a")
    sp.add_argument("run_b")
    sp.add_argument("--subdir", help="trajectory subdirectory (default: trajectory, else densities)")
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        record = {"error": exc.kind, "message": str(exc), **exc.detail}
        out = exc.detail.get("output")
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(json.dumps(record, indent=2))
        print(json.dumps(record), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
