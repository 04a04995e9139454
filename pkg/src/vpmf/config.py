"""TOML run configuration with strict key checking.

Sections and keys (all optional unless marked):

    [solver]  epsilon*, n*, t_final*, alpha, dt ("auto" or number), scheme, d,
              volume_constraint, force
    [region]  kind*, centers, radii, semi_axes, half_width
    [output]  directory, record_stride, snapshot_stride, observables,
              assertions, oracle_tolerance_cells
    [brakke]  tests (list of {x0, r, t1, t2, profile}), weak_C ("auto" or number),
              max_normalized_residual
    [sweep]   epsilons*, resolutions, record_stride, workers, trends
              (list of {observable, kind, factor, ref})
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field

import tomli_w

from .allen_cahn_solver import CFL_SAFETY, SCHEMES, SolverParams, cfl_limit, check_resolution
from .brakke import TestFunction
from .diagnostics import CSV_COLUMNS
from .grid_fields import TorusGrid
from .initial_data import Region
from .sweep import SweepPlan, TrendAssertion

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OPTIONAL_OBSERVABLES = ("density_ratio_sup",)
RUN_ASSERTIONS = ("energy", "volume", "density")

_SCHEMA = {
    "solver": {"epsilon", "alpha", "dt", "t_final", "scheme", "d", "n", "volume_constraint", "force"},
    "region": {"kind", "centers", "radii", "semi_axes", "half_width"},
    "output": {
        "directory",
        "record_stride",
        "snapshot_stride",
        "observables",
        "assertions",
        "oracle_tolerance_cells",
    },
    "brakke": {"tests", "weak_C", "max_normalized_residual"},
    "sweep": {"epsilons", "resolutions", "record_stride", "workers", "trends"},
}
_TEST_KEYS = {"x0", "r", "t1", "t2", "profile"}
_TREND_KEYS = {"observable", "kind", "factor", "ref"}
_DEFAULT_ALPHA = 0.95


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class SweepSettings:
    epsilons: tuple
    resolutions: tuple = ()
    record_stride: int = 10
    workers: int = 1
    trends: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    epsilon: float
    n: int
    t_final: float
    region: Region
    alpha: float = _DEFAULT_ALPHA
    dt: float = 0.0
    dt_auto: bool = True
    scheme: str = "explicit"
    d: int = 2
    volume_constraint: bool = True
    force: bool = False
    directory: str = "out"
    record_stride: int = 1
    snapshot_stride: int = 0
    observables: tuple = CSV_COLUMNS
    assertions: tuple = ()
    oracle_tolerance_cells: float = 2.0
    brakke_tests: tuple = ()
    weak_C: float | None = None
    max_normalized_residual: float = 0.05
    sweep: SweepSettings | None = None

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.d, self.n)

    def solver_params(self) -> SolverParams:
        return SolverParams(
            self.epsilon,
            self.alpha,
            self.dt,
            self.t_final,
            self.scheme,
            self.grid,
            volume_constraint=self.volume_constraint,
            force=self.force,
        )

    def sweep_plan(self) -> SweepPlan:
        if self.sweep is None:
            raise ConfigError("config has no [sweep] section")
        return SweepPlan(
            region=self.region,
            alpha=self.alpha,
            epsilons=self.sweep.epsilons,
            t_final=self.t_final,
            scheme=self.scheme,
            resolutions=self.sweep.resolutions,
            record_stride=self.sweep.record_stride,
            brakke_tests=self.brakke_tests,
            trends=self.sweep.trends,
        )


# -- parsing ---------------------------------------------------------------------


def _key_line(text: str, section: str, key: str) -> int | None:
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]", line)
        if m:
            current = m.group(1)
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
        if section is None and current is None and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
    return None


def _section_line(text: str, section: str) -> int | None:
    for i, raw in enumerate(text.splitlines(), start=1):
        if re.match(rf"^\[\s*{re.escape(section)}\s*\]", raw.strip()):
            return i
    return None


def _number(value, what: str, line=None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{what} must be a number, got {value!r}", line)
    return float(value)


def _integer(value, what: str, line=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{what} must be an integer, got {value!r}", line)
    return value


def _check_keys(table: dict, allowed: set, where: str, line_of) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}; allowed: {sorted(allowed)}", line_of(key))


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a configuration document."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML parse error: {exc}", int(m.group(1)) if m else None) from None

    for name, value in doc.items():
        if name not in _SCHEMA:
            raise ConfigError(
                f"unknown section or key {name!r}; allowed sections: {sorted(_SCHEMA)}",
                _section_line(text, name) or _key_line(text, None, name),
            )
        if not isinstance(value, dict):
            raise ConfigError(f"{name!r} must be a [section]", _key_line(text, None, name))
        _check_keys(value, _SCHEMA[name], f"[{name}]", lambda k, s=name: _key_line(text, s, k))

    def line(section, key):
        return _key_line(text, section, key)

    solver = doc.get("solver")
    if solver is None:
        raise ConfigError("missing [solver] section")
    for req in ("epsilon", "n", "t_final"):
        if req not in solver:
            raise ConfigError(f"[solver] needs {req!r}", _section_line(text, "solver"))
    region_tab = doc.get("region")
    if region_tab is None:
        raise ConfigError("missing [region] section")
    if "kind" not in region_tab:
        raise ConfigError("[region] needs 'kind'", _section_line(text, "region"))

    eps = _number(solver["epsilon"], "epsilon", line("solver", "epsilon"))
    n = _integer(solver["n"], "n", line("solver", "n"))
    d = _integer(solver.get("d", 2), "d", line("solver", "d"))
    t_final = _number(solver["t_final"], "t_final", line("solver", "t_final"))
    alpha = _number(solver.get("alpha", _DEFAULT_ALPHA), "alpha", line("solver", "alpha"))
    scheme = solver.get("scheme", "explicit")
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}, got {scheme!r}", line("solver", "scheme"))
    try:
        grid = TorusGrid(d, n)
        check_resolution(eps, grid)
    except ValueError as exc:
        raise ConfigError(str(exc), line("solver", "epsilon")) from None
    dt_raw = solver.get("dt", "auto")
    if dt_raw == "auto":
        dt, dt_auto = CFL_SAFETY * cfl_limit(eps, grid, scheme), True
    else:
        dt, dt_auto = _number(dt_raw, "dt ('auto' or a number)", line("solver", "dt")), False
    volume_constraint = solver.get("volume_constraint", True)
    force = solver.get("force", False)
    for key, val in (("volume_constraint", volume_constraint), ("force", force)):
        if not isinstance(val, bool):
            raise ConfigError(f"{key} must be true or false", line("solver", key))

    region = _parse_region(region_tab, text)
    try:
        region.validate(d, eps)
    except ValueError as exc:
        raise ConfigError(str(exc), _section_line(text, "region")) from None

    out = doc.get("output", {})
    record_stride = _integer(out.get("record_stride", 1), "record_stride", line("output", "record_stride"))
    snapshot_stride = _integer(out.get("snapshot_stride", 0), "snapshot_stride", line("output", "snapshot_stride"))
    if record_stride < 1:
        raise ConfigError("record_stride must be >= 1", line("output", "record_stride"))
    if snapshot_stride < 0:
        raise ConfigError("snapshot_stride must be >= 0 (0 disables periodic snapshots)", line("output", "snapshot_stride"))
    observables = tuple(out.get("observables", CSV_COLUMNS))
    bad = [o for o in observables if o not in CSV_COLUMNS]
    if bad:
        raise ConfigError(f"unknown observables {bad}; allowed: {list(CSV_COLUMNS)}", line("output", "observables"))
    assertions = tuple(out.get("assertions", ()))
    bad = [a for a in assertions if a not in RUN_ASSERTIONS]
    if bad:
        raise ConfigError(f"unknown assertions {bad}; allowed: {list(RUN_ASSERTIONS)}", line("output", "assertions"))
    if "density" in assertions and "density_ratio_sup" not in observables:
        raise ConfigError("the density assertion needs the density_ratio_sup observable", line("output", "assertions"))
    oracle_tol = _number(out.get("oracle_tolerance_cells", 2.0), "oracle_tolerance_cells", line("output", "oracle_tolerance_cells"))
    directory = out.get("directory", "out")
    if not isinstance(directory, str) or not directory:
        raise ConfigError("directory must be a non-empty string", line("output", "directory"))

    brakke = doc.get("brakke", {})
    tests = tuple(_parse_test(t, line("brakke", "tests")) for t in brakke.get("tests", []))
    weak_raw = brakke.get("weak_C", "auto")
    weak_C = None if weak_raw == "auto" else _number(weak_raw, "weak_C ('auto' or a number)", line("brakke", "weak_C"))
    max_res = _number(
        brakke.get("max_normalized_residual", 0.05), "max_normalized_residual", line("brakke", "max_normalized_residual")
    )

    sweep = None
    if "sweep" in doc:
        sweep = _parse_sweep(doc["sweep"], text)

    cfg = RunConfig(
        epsilon=eps,
        n=n,
        t_final=t_final,
        region=region,
        alpha=alpha,
        dt=dt,
        dt_auto=dt_auto,
        scheme=scheme,
        d=d,
        volume_constraint=volume_constraint,
        force=force,
        directory=directory,
        record_stride=record_stride,
        snapshot_stride=snapshot_stride,
        observables=observables,
        assertions=assertions,
        oracle_tolerance_cells=oracle_tol,
        brakke_tests=tests,
        weak_C=weak_C,
        max_normalized_residual=max_res,
        sweep=sweep,
    )
    try:
        cfg.solver_params()
    except ValueError as exc:
        raise ConfigError(str(exc), _section_line(text, "solver")) from None
    if sweep is not None:
        try:
            cfg.sweep_plan()
        except ValueError as exc:
            raise ConfigError(str(exc), _section_line(text, "sweep")) from None
    return cfg


def _parse_region(tab: dict, text: str) -> Region:
    try:
        return Region(
            kind=tab["kind"],
            centers=tuple(tuple(c) for c in tab.get("centers", ())),
            radii=tuple(tab.get("radii", ())),
            semi_axes=tuple(tab.get("semi_axes", ())),
            half_width=tab.get("half_width", 0.0),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [region]: {exc}", _section_line(text, "region")) from None


def _parse_test(tab, line) -> TestFunction:
    if not isinstance(tab, dict):
        raise ConfigError("each brakke test must be a table {x0, r, t1, t2, profile}", line)
    unknown = set(tab) - _TEST_KEYS
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in a brakke test; allowed: {sorted(_TEST_KEYS)}", line)
    missing = {"x0", "r", "t1", "t2"} - set(tab)
    if missing:
        raise ConfigError(f"brakke test is missing {sorted(missing)}", line)
    try:
        return TestFunction(tuple(tab["x0"]), float(tab["r"]), float(tab["t1"]), float(tab["t2"]), tab.get("profile", "constant"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid brakke test: {exc}", line) from None


def _parse_sweep(tab: dict, text: str) -> SweepSettings:
    def line(key):
        return _key_line(text, "sweep", key)

    if "epsilons" not in tab:
        raise ConfigError("[sweep] needs 'epsilons'", _section_line(text, "sweep"))
    eps = tuple(_number(e, "sweep epsilon", line("epsilons")) for e in tab["epsilons"])
    res = tuple(_integer(v, "sweep resolution", line("resolutions")) for v in tab.get("resolutions", ()))
    stride = _integer(tab.get("record_stride", 10), "record_stride", line("record_stride"))
    workers = _integer(tab.get("workers", 1), "workers", line("workers"))
    if workers < 1:
        raise ConfigError("workers must be >= 1", line("workers"))
    trends = []
    for tr in tab.get("trends", []):
        if not isinstance(tr, dict):
            raise ConfigError("each trend must be a table {observable, kind, factor, ref}", line("trends"))
        unknown = set(tr) - _TREND_KEYS
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)} in a trend; allowed: {sorted(_TREND_KEYS)}", line("trends"))
        try:
            trends.append(TrendAssertion(tr["observable"], tr["kind"], tr.get("factor"), tr.get("ref", "")))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid trend: {exc}", line("trends")) from None
    return SweepSettings(eps, res, stride, workers, tuple(trends))


# -- serialization ----------------------------------------------------------------


def config_to_dict(cfg: RunConfig) -> dict:
    solver = {
        "epsilon": cfg.epsilon,
        "n": cfg.n,
        "d": cfg.d,
        "t_final": cfg.t_final,
        "alpha": cfg.alpha,
        "dt": "auto" if cfg.dt_auto else cfg.dt,
        "scheme": cfg.scheme,
        "volume_constraint": cfg.volume_constraint,
        "force": cfg.force,
    }
    r = cfg.region
    region = {"kind": r.kind}
    if r.centers:
        region["centers"] = [list(c) for c in r.centers]
    if r.radii:
        region["radii"] = list(r.radii)
    if r.semi_axes:
        region["semi_axes"] = list(r.semi_axes)
    if r.kind == "stripe":
        region["half_width"] = r.half_width
    doc = {
        "solver": solver,
        "region": region,
        "output": {
            "directory": cfg.directory,
            "record_stride": cfg.record_stride,
            "snapshot_stride": cfg.snapshot_stride,
            "observables": list(cfg.observables),
            "assertions": list(cfg.assertions),
            "oracle_tolerance_cells": cfg.oracle_tolerance_cells,
        },
        "brakke": {
            "tests": [t.to_dict() for t in cfg.brakke_tests],
            "weak_C": "auto" if cfg.weak_C is None else cfg.weak_C,
            "max_normalized_residual": cfg.max_normalized_residual,
        },
    }
    if cfg.sweep is not None:
        s = cfg.sweep
        doc["sweep"] = {
            "epsilons": list(s.epsilons),
            "resolutions": list(s.resolutions),
            "record_stride": s.record_stride,
            "workers": s.workers,
            "trends": [{"observable": t.observable, "kind": t.kind, "factor": t.factor, "ref": t.ref} for t in s.trends],
        }
    return doc


def serialize_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
