"""Epsilon sweeps with trend assertions across the sweep members."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np
from threadpoolctl import threadpool_limits

from ._io import atomic_write_text
from .allen_cahn_solver import SCHEMES, CFL_SAFETY, SolverParams, run
from .brakke import BrakkeAccumulator, TestFunction, lambda_l2_report
from .diagnostics import CSV_COLUMNS, DENSITY_RADII, Recorder, csv_header
from .grid_fields import TorusGrid
from .initial_data import Region, build_phi0
from .oracle2d import CircleSystem, evolve_circles

log = logging.getLogger(__name__)

DECREASING_SLACK = 1.2
UNIFORM_FACTOR = 3.0
TREND_KINDS = ("decreasing", "uniform")

# Observables computed per configuration in addition to the diagnostics columns.
DERIVED_OBSERVABLES = (
    "xi_ratio",
    "lambda_l2",
    "lambda_l2_ratio",
    "psi_volume_error",
    "k_volume_error_max",
    "mu_error",
    "C_emp_max",
    "density_ratio_max",
)

SCENARIOS = {
    "ball": Region.ball((0.5, 0.5), 0.25),
    "ellipse": Region.ellipse((0.5, 0.5), (0.3, 0.2)),
    "two_balls": Region.two_balls((0.25, 0.25), 0.12, (0.75, 0.75), 0.2),
    "stripe": Region.stripe(0.25),
}


def resolution_for(epsilon: float) -> int:
    """Smallest power-of-two ``n`` with ``epsilon >= 2h`` (interface band of 4 cells)."""
    return 2 ** max(3, math.ceil(math.log2(2.0 / epsilon - 1e-9)))


def every(stride: int, t_final: float, fn):
    """Wrap an observer so it only fires on every ``stride``-th step and at ``t_final``."""

    def observer(state):
        if state.step % stride == 0 or state.t >= t_final * (1.0 - 1e-12):
            fn(state)

    return observer


@dataclass(frozen=True)
class TrendAssertion:
    """Cross-sweep check on one observable.

    ``decreasing``: with epsilons in descending order every value is at most
    ``factor`` times its predecessor.  ``uniform``: ``max / min <= factor``.
    ``ref`` names the statement the trend stands in for.
    """

    observable: str
    kind: str
    factor: float | None = None
    ref: str = ""

    def __post_init__(self):
        if self.kind not in TREND_KINDS:
            raise ValueError(f"unknown trend kind {self.kind!r}; expected one of {TREND_KINDS}")
        if self.factor is None:
            object.__setattr__(self, "factor", DECREASING_SLACK if self.kind == "decreasing" else UNIFORM_FACTOR)

    def evaluate(self, values) -> bool:
        v = [float(x) for x in values]
        if any(not math.isfinite(x) for x in v):
            return False
        if len(v) < 2:
            return True
        if self.kind == "decreasing":
            return all(b <= self.factor * a for a, b in zip(v, v[1:]))
        lo, hi = min(v), max(v)
        if lo <= 0:
            return hi <= 0
        return hi / lo <= self.factor


@dataclass(frozen=True)
class SweepPlan:
    region: Region
    alpha: float
    epsilons: tuple
    t_final: float
    scheme: str = "explicit"
    dt_safety: float = CFL_SAFETY
    # explicit n per epsilon; missing entries use resolution_for
    resolutions: tuple = ()
    record_stride: int = 10
    brakke_tests: tuple = ()
    trends: tuple = ()
    name: str = "sweep"

    def __post_init__(self):
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "resolutions", tuple(int(n) for n in self.resolutions))
        object.__setattr__(self, "brakke_tests", tuple(self.brakke_tests))
        object.__setattr__(self, "trends", tuple(self.trends))
        if not self.epsilons:
            raise ValueError("sweep needs at least one epsilon")
        if list(self.epsilons) != sorted(self.epsilons, reverse=True) or len(set(self.epsilons)) != len(self.epsilons):
            raise ValueError("sweep epsilons must be strictly descending")
        if self.resolutions and len(self.resolutions) != len(self.epsilons):
            raise ValueError("need one resolution per epsilon")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0.0 < self.dt_safety <= 1.0:
            raise ValueError("dt_safety must lie in (0, 1]")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        known = set(CSV_COLUMNS) | set(DERIVED_OBSERVABLES)
        for tr in self.trends:
            if tr.observable not in known:
                raise ValueError(f"unknown trend observable {tr.observable!r}")
        # fail before any compute if a configuration is invalid
        for p in self.configurations():
            self.region.validate(p.grid.d, p.epsilon)

    def configurations(self) -> list[SolverParams]:
        d = self.region.dim
        out = []
        for i, eps in enumerate(self.epsilons):
            n = self.resolutions[i] if self.resolutions else resolution_for(eps)
            out.append(
                SolverParams.auto(eps, self.alpha, self.t_final, TorusGrid(d, n), self.scheme, safety=self.dt_safety)
            )
        return out


def oracle_perimeter(region: Region, t: float) -> float:
    """Sharp-interface perimeter at time ``t``: circle ODE for balls, initial perimeter otherwise."""
    if region.kind in ("ball", "two_balls") and region.dim == 2:
        traj = evolve_circles(CircleSystem.from_region(region), min(1e-3, max(t, 1e-12)), t)
        return float(2.0 * np.pi * np.sum(traj.radii[-1]))
    return region.perimeter()


def run_configuration(plan: SweepPlan, params: SolverParams, csv_path: str | None = None) -> dict:
    """Run one sweep member and collect its observables."""
    profile = build_phi0(plan.region, params.epsilon, params.grid)
    recorder = Recorder(params, radii=DENSITY_RADII)
    lam_track = []
    accumulator = BrakkeAccumulator(plan.brakke_tests, params)

    def track(state):
        lam_track.append(SimpleNamespace(t=state.t, lam=state.lam))

    final = run(
        params,
        profile,
        observers=[every(plan.record_stride, params.t_final, recorder), track, accumulator],
    )
    recs = recorder.records
    last = recs[-1]
    lam_l2, lam_ratio = lambda_l2_report(lam_track, 0.0, params.t_final)
    reports = accumulator.reports()
    v0 = profile.volume_target
    observables = {name: last.get(name) for name in CSV_COLUMNS}
    observables.update(
        xi_ratio=last.xi_total / last.E_S,
        lambda_l2=lam_l2,
        lambda_l2_ratio=lam_ratio,
        psi_volume_error=abs(last.vol_psi - plan.region.volume()),
        k_volume_error_max=max(abs(r.vol_k - v0) for r in recs),
        mu_error=abs(last.mu_total - oracle_perimeter(plan.region, final.t)),
        C_emp_max=max((r.C_emp for r in reports), default=float("nan")),
        density_ratio_max=max(r.density_ratio_sup for r in recs),
    )
    if csv_path is not None:
        lines = [csv_header()] + [r.csv_line() for r in recs]
        atomic_write_text(Path(csv_path), "\n".join(lines) + "\n")
    return {
        "epsilon": params.epsilon,
        "n": params.grid.n,
        "d": params.grid.d,
        "dt": params.dt,
        "scheme": params.scheme,
        "alpha": params.alpha,
        "steps": final.step,
        "csv": csv_path,
        "observables": observables,
        "brakke": [r.to_json() for r in reports],
    }


def _run_member(args):
    plan, params, csv_path = args
    _limit_threads()
    return run_configuration(plan, params, csv_path)


def _limit_threads():
    threads = os.environ.get("VPMF_THREADS")
    if threads:
        threadpool_limits(int(threads))


@dataclass
class SweepReport:
    plan_name: str
    configurations: list
    assertions: list
    policy: dict = field(default_factory=lambda: {"decreasing_slack": DECREASING_SLACK, "uniform_factor": UNIFORM_FACTOR})

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    def values(self, observable: str) -> list[float]:
        return [c["observables"][observable] for c in self.configurations]

    def fingerprint(self) -> list[dict]:
        return [
            {"d": c["d"], "n": c["n"], "dt": c["dt"], "scheme": c["scheme"], "epsilon": c["epsilon"]}
            for c in self.configurations
        ]

    def to_json(self) -> dict:
        return {
            "plan": self.plan_name,
            "policy": self.policy,
            "fingerprint": self.fingerprint(),
            "configurations": self.configurations,
            "assertions": self.assertions,
            "passed": self.passed,
        }

    def dumps(self) -> str:
        return json.dumps(_jsonable(self.to_json()), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def run_sweep(plan: SweepPlan, workers: int = 1, out_dir=None) -> SweepReport:
    """Run every configuration of ``plan`` and evaluate its trend assertions.

    Members run in a process pool when ``workers > 1``; results are folded in
    plan order, so the report does not depend on scheduling.  Solver failures
    propagate with the failing epsilon attached.
    """
    configs = plan.configurations()
    out = Path(out_dir) if out_dir is not None else None
    jobs = []
    for p in configs:
        csv_path = None
        if out is not None:
            sub = out / f"eps_{p.epsilon:g}_n{p.grid.n}"
            sub.mkdir(parents=True, exist_ok=True)
            csv_path = str(sub / "diagnostics.csv")
        jobs.append((plan, p, csv_path))
    results = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            futures = [pool.submit(_run_member, j) for j in jobs]
            for j, fut in zip(jobs, futures):
                results.append(_tagged(fut.result, j[1]))
    else:
        for j in jobs:
            results.append(_tagged(lambda j=j: _run_member(j), j[1]))
    if out is not None:
        # paths relative to the sweep directory keep the report location-independent
        for r in results:
            r["csv"] = str(Path(r["csv"]).relative_to(out))
    assertions = []
    for tr in plan.trends:
        vals = [r["observables"][tr.observable] for r in results]
        assertions.append(
            {
                "observable": tr.observable,
                "kind": tr.kind,
                "factor": tr.factor,
                "ref": tr.ref,
                "epsilons": list(plan.epsilons),
                "values": vals,
                "passed": tr.evaluate(vals),
            }
        )
    report = SweepReport(plan.name, results, assertions)
    if out is not None:
        atomic_write_text(out / "sweep_report.json", report.dumps())
    return report


class SweepMemberError(RuntimeError):
    """A sweep configuration failed; ``epsilon`` and ``n`` identify it."""

    def __init__(self, epsilon: float, n: int, cause: Exception):
        super().__init__(f"sweep member epsilon={epsilon:g}, n={n} failed: {type(cause).__name__}: {cause}")
        self.epsilon = epsilon
        self.n = n
        self.cause = cause


def _tagged(fn, params: SolverParams):
    try:
        return fn()
    except Exception as exc:
        raise SweepMemberError(params.epsilon, params.grid.n, exc) from exc
