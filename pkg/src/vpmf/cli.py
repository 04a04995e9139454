"""Command-line entry point: ``vpmf run|sweep|check-brakke|oracle-compare``.

Exit status is 0 when every enabled assertion passes, 1 when an assertion
fails, and 2 on any error (bad config, missing files, solver instability), in
which case a JSON error object is printed to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ._io import atomic_write_text
from .allen_cahn_solver import InstabilityError, PhaseState, lambda_eps, run
from .brakke import BrakkeAccumulator
from .config import ConfigError, RunConfig, load_config
from .diagnostics import CSV_COLUMNS, Recorder
from .grid_fields import read_snapshot, write_snapshot
from .initial_data import build_phi0
from .oracle2d import CircleSystem, compare_phase_field, evolve_circles
from .sweep import SweepMemberError, run_sweep

log = logging.getLogger("vpmf")

SNAPSHOT_RE = re.compile(r"^snap_(\d{8})\.vpmf$")
EXIT_OK, EXIT_ASSERT, EXIT_ERROR = 0, 1, 2


class CommandError(RuntimeError):
    pass


def _thread_limit():
    threads = os.environ.get("VPMF_THREADS")
    if not threads:
        return nullcontext()
    try:
        n = int(threads)
    except ValueError:
        raise CommandError(f"VPMF_THREADS must be a positive integer, got {threads!r}") from None
    if n < 1:
        raise CommandError(f"VPMF_THREADS must be a positive integer, got {threads!r}")
    return threadpool_limits(n)


def snapshot_name(step: int) -> str:
    return f"snap_{step:08d}.vpmf"


def _in_any_window(t: float, tests) -> bool:
    return any(tt.t1 - 1e-9 <= t <= tt.t2 + 1e-9 for tt in tests)


def _format_row(record, observables) -> str:
    values = []
    for name, v in zip(CSV_COLUMNS, record.as_row()):
        values.append(repr(float(v)) if name in observables else "nan")
    return ",".join(values)


# -- commands ------------------------------------------------------------------------


def cmd_run(cfg: RunConfig, out_dir=None) -> tuple[int, dict]:
    """Integrate the configured scenario and write diagnostics, snapshots and the final state."""
    out = Path(out_dir or cfg.directory)
    out.mkdir(parents=True, exist_ok=True)
    # stale snapshots from an earlier run would corrupt later trajectory reads
    for old in out.iterdir():
        if SNAPSHOT_RE.match(old.name):
            old.unlink()
    params = cfg.solver_params()
    profile = build_phi0(cfg.region, cfg.epsilon, cfg.grid)
    recorder = Recorder(params, with_density="density_ratio_sup" in cfg.observables)

    def snapshots(state: PhaseState):
        periodic = cfg.snapshot_stride > 0 and state.step % cfg.snapshot_stride == 0
        if periodic or _in_any_window(state.t, cfg.brakke_tests):
            write_snapshot(out / snapshot_name(state.step), params.grid, state.phi, state.t)

    def every_record(state: PhaseState):
        if state.step % cfg.record_stride == 0 or state.t >= cfg.t_final * (1.0 - 1e-12):
            recorder(state)

    failure = None
    try:
        final = run(params, profile, observers=[every_record, snapshots])
    except InstabilityError as exc:
        failure = exc
        final = exc.last_state
    lines = [",".join(CSV_COLUMNS)] + [_format_row(r, cfg.observables) for r in recorder.records]
    atomic_write_text(out / "diagnostics.csv", "\n".join(lines) + "\n")
    if final is not None:
        write_snapshot(out / "final_state.vpmf", params.grid, final.phi, final.t)
    if failure is not None:
        raise CommandError(f"solver instability: {failure}")

    checks = _run_assertions(cfg, recorder, profile)
    summary = {
        "command": "run",
        "output": str(out),
        "steps": final.step,
        "t": final.t,
        "assertions": checks,
        "passed": all(c["passed"] for c in checks),
    }
    return (EXIT_OK if summary["passed"] else EXIT_ASSERT), summary


def _run_assertions(cfg: RunConfig, recorder: Recorder, profile) -> list[dict]:
    recs = recorder.records
    out = []
    e0 = recs[0].E_total
    if "energy" in cfg.assertions:
        # tolerance per recorded interval, summed over the steps it spans
        tol = 10.0 * cfg.dt**2 * e0 / cfg.epsilon**3 * cfg.record_stride
        worst = max((b.E_total - a.E_total for a, b in zip(recs, recs[1:])), default=0.0)
        out.append({"name": "energy", "worst_increase": worst, "tolerance": tol, "passed": worst <= tol})
    if "volume" in cfg.assertions:
        bound = 2.0 * math.sqrt(2.0 * cfg.epsilon**cfg.alpha * e0)
        worst = max(abs(r.vol_k - profile.volume_target) for r in recs)
        out.append({"name": "volume", "worst_deviation": worst, "bound": bound, "passed": worst <= bound})
    if "density" in cfg.assertions:
        worst = max(r.density_ratio_sup for r in recs)
        out.append({"name": "density", "worst_ratio": worst, "bound": 2.0, "passed": worst <= 2.0})
    return out


def load_trajectory(cfg: RunConfig, trajectory_dir):
    """Yield phase states from the snapshots of a completed run, in step order.

    The multiplier is recomputed from each field with the volume target of the
    configured initial data, exactly as the solver evaluates it.
    """
    root = Path(trajectory_dir)
    if not root.is_dir():
        raise CommandError(f"trajectory directory {root} does not exist")
    files = sorted((int(m.group(1)), p) for p in root.iterdir() if (m := SNAPSHOT_RE.match(p.name)))
    params = cfg.solver_params()
    v0 = build_phi0(cfg.region, cfg.epsilon, cfg.grid).volume_target
    for step, path in files:
        grid, phi, t = read_snapshot(path)
        if grid != params.grid:
            raise CommandError(f"{path.name}: grid {grid} does not match config grid {params.grid}")
        yield PhaseState(phi, t, lambda_eps(phi, v0, params), v0, step)


def cmd_check_brakke(cfg: RunConfig, trajectory_dir, out_dir=None) -> tuple[int, dict]:
    """Evaluate every configured test function over a stored trajectory."""
    if not Path(trajectory_dir).is_dir():
        raise CommandError(f"trajectory directory {trajectory_dir} does not exist")
    out = Path(out_dir or trajectory_dir)
    params = cfg.solver_params()
    reports = []
    if cfg.brakke_tests:
        acc = BrakkeAccumulator(cfg.brakke_tests, params)
        for state in load_trajectory(cfg, trajectory_dir):
            acc(state)
        reports = acc.reports()
    C = cfg.weak_C
    if C is None and reports:
        C = 2.0 * max(max(r.C_emp for r in reports), 0.0)
    for r in reports:
        r.weak_C = C
    payload = [r.to_json() for r in reports]
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "brakke_reports.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    passed = all(r.normalized_residual <= cfg.max_normalized_residual and r.weak_margin(C) >= 0 for r in reports)
    summary = {"command": "check-brakke", "reports": len(reports), "weak_C": C, "passed": passed}
    return (EXIT_OK if passed else EXIT_ASSERT), summary


def cmd_oracle_compare(cfg: RunConfig, trajectory_dir, out_dir=None) -> tuple[int, dict]:
    """Compare stored interface snapshots with the circle ODE started from the same balls."""
    if cfg.d != 2 or cfg.region.kind not in ("ball", "two_balls"):
        raise CommandError("oracle-compare needs a two-dimensional ball or two_balls region")
    out = Path(out_dir or trajectory_dir)
    system = CircleSystem.from_region(cfg.region)
    oracle = evolve_circles(system, min(1e-4, cfg.t_final), cfg.t_final)

    def snaps():
        for s in load_trajectory(cfg, trajectory_dir):
            yield s.t, s.phi, cfg.grid

    result = compare_phase_field(snaps(), oracle, system.centers)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "oracle_compare.csv", result.to_csv())
    atomic_write_text(out / "oracle_trajectory.csv", oracle.to_csv())
    tol = cfg.oracle_tolerance_cells * cfg.grid.h
    passed = bool(result.rows) and result.max_error <= tol
    summary = {
        "command": "oracle-compare",
        "snapshots": len(result.rows),
        "max_error": result.max_error,
        "tolerance": tol,
        "events": result.events,
        "passed": passed,
    }
    return (EXIT_OK if passed else EXIT_ASSERT), summary


def cmd_sweep(cfg: RunConfig, out_dir=None) -> tuple[int, dict]:
    out = Path(out_dir or cfg.directory)
    report = run_sweep(cfg.sweep_plan(), workers=cfg.sweep.workers if cfg.sweep else 1, out_dir=out)
    summary = {
        "command": "sweep",
        "report": str(out / "sweep_report.json"),
        "assertions": [{k: a[k] for k in ("observable", "kind", "passed")} for a in report.assertions],
        "passed": report.passed,
    }
    return (EXIT_OK if report.passed else EXIT_ASSERT), summary


# -- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpmf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate one configuration")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides [output] directory)")

    p = sub.add_parser("sweep", help="run the configured epsilon sweep")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides [output] directory)")

    p = sub.add_parser("check-brakke", help="evaluate Brakke test functions on a stored run")
    p.add_argument("config")
    p.add_argument("trajectory_dir")
    p.add_argument("--out", help="where to write brakke_reports.json (default: the trajectory dir)")

    p = sub.add_parser("oracle-compare", help="compare a stored 2-D run with the circle ODE")
    p.add_argument("config")
    p.add_argument("trajectory_dir")
    p.add_argument("--out", help="where to write oracle_compare.csv (default: the trajectory dir)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with _thread_limit():
            cfg = load_config(args.config)
            if args.command == "run":
                code, summary = cmd_run(cfg, args.out)
            elif args.command == "sweep":
                code, summary = cmd_sweep(cfg, args.out)
            elif args.command == "check-brakke":
                code, summary = cmd_check_brakke(cfg, args.trajectory_dir, args.out)
            else:
                code, summary = cmd_oracle_compare(cfg, args.trajectory_dir, args.out)
    except (ConfigError, CommandError, SweepMemberError, OSError, ValueError, RuntimeError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        if isinstance(exc, ConfigError) and exc.line:
            err["line"] = exc.line
        print(json.dumps(err), file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(summary, default=_json_default))
    return code


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


if __name__ == "__main__":
    sys.exit(main())
