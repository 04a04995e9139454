import json
import math

import pytest

from vpmf import sweep as sweep_mod
from vpmf.allen_cahn_solver import InstabilityError
from vpmf.brakke import TestFunction
from vpmf.initial_data import Region
from vpmf.sweep import (
    SCENARIOS,
    SweepMemberError,
    SweepPlan,
    TrendAssertion,
    oracle_perimeter,
    resolution_for,
    run_sweep,
)

TINY = dict(region=Region.ball((0.5, 0.5), 0.3), alpha=0.95, t_final=2e-3, record_stride=5)


def test_resolution_rule():
    assert [resolution_for(e) for e in (0.16, 0.08, 0.04, 0.02, 0.01)] == [16, 32, 64, 128, 256]
    for e in (0.05, 0.03, 0.017):
        n = resolution_for(e)
        assert e >= 2.0 / n and e < 4.0 / n


def test_trend_kinds():
    dec = TrendAssertion("mu_error", "decreasing")
    assert dec.factor == 1.2
    assert dec.evaluate([1.0, 0.5, 0.25])
    assert dec.evaluate([1.0, 1.1, 1.3])
    assert not dec.evaluate([1.0, 1.3])
    assert not dec.evaluate([1.0, math.nan])
    uni = TrendAssertion("C_emp_max", "uniform", factor=2.0)
    assert uni.evaluate([0.2, 0.3, 0.39]) and not uni.evaluate([0.1, 0.3])
    assert uni.evaluate([0.0, 0.0]) and not uni.evaluate([0.0, 1.0])
    # a single configuration has no trend to violate
    assert dec.evaluate([5.0]) and uni.evaluate([5.0])
    with pytest.raises(ValueError):
        TrendAssertion("mu_error", "sideways")


def test_plan_validation():
    with pytest.raises(ValueError, match="descending"):
        SweepPlan(epsilons=(0.04, 0.08), **TINY)
    with pytest.raises(ValueError, match="at least one"):
        SweepPlan(epsilons=(), **TINY)
    with pytest.raises(ValueError, match="one resolution"):
        SweepPlan(epsilons=(0.08, 0.04), resolutions=(32,), **TINY)
    with pytest.raises(ValueError, match="observable"):
        SweepPlan(epsilons=(0.08,), trends=(TrendAssertion("nope", "uniform"),), **TINY)
    # under-resolved member fails before any compute
    with pytest.raises(ValueError, match="epsilon"):
        SweepPlan(epsilons=(0.08,), resolutions=(16,), **TINY)
    plan = SweepPlan(epsilons=(0.08, 0.04), **TINY)
    assert [p.grid.n for p in plan.configurations()] == [32, 64]


def test_oracle_perimeter():
    ball = SCENARIOS["ball"]
    assert oracle_perimeter(ball, 0.1) == pytest.approx(2 * math.pi * 0.25, rel=1e-12)
    two = SCENARIOS["two_balls"]
    assert oracle_perimeter(two, 0.0) == pytest.approx(2 * math.pi * 0.32)
    # coarsening shortens the total length
    assert oracle_perimeter(two, 0.005) < 2 * math.pi * 0.32
    assert oracle_perimeter(SCENARIOS["stripe"], 1.0) == 2.0


@pytest.fixture(scope="module")
def tiny_plan():
    tests = (TestFunction((0.8, 0.5), 0.15, 0.0, 2e-3),)
    trends = (
        TrendAssertion("mu_error", "decreasing", ref="perimeter convergence"),
        TrendAssertion("C_emp_max", "uniform", ref="bounded discrepancy"),
    )
    return SweepPlan(epsilons=(0.08, 0.04), brakke_tests=tests, trends=trends, **TINY)


def test_sweep_report_is_deterministic(tiny_plan, tmp_path):
    a = run_sweep(tiny_plan, out_dir=tmp_path / "a")
    b = run_sweep(tiny_plan, out_dir=tmp_path / "b")
    assert a.dumps() == b.dumps()
    assert (tmp_path / "a" / "sweep_report.json").read_text() == a.dumps()
    doc = json.loads(a.dumps())
    assert [f["n"] for f in doc["fingerprint"]] == [32, 64]
    assert {x["observable"] for x in doc["assertions"]} == {"mu_error", "C_emp_max"}
    assert all(x["ref"] for x in doc["assertions"])
    assert (tmp_path / "a" / "eps_0.04_n64" / "diagnostics.csv").exists()
    member = doc["configurations"][0]
    assert set(member["observables"]) >= set(sweep_mod.DERIVED_OBSERVABLES)
    assert len(member["brakke"]) == 1


def test_sweep_single_epsilon_passes_vacuously(tiny_plan):
    plan = SweepPlan(epsilons=(0.08,), trends=tiny_plan.trends, brakke_tests=tiny_plan.brakke_tests, **TINY)
    report = run_sweep(plan)
    assert report.passed and all(a["passed"] for a in report.assertions)


def test_member_failure_names_epsilon(tiny_plan, monkeypatch):
    real = sweep_mod.run_configuration

    def flaky(plan, params, csv_path=None):
        if params.epsilon == 0.04:
            raise InstabilityError("blew up", 1e-3, None)
        return real(plan, params, csv_path)

    monkeypatch.setattr(sweep_mod, "run_configuration", flaky)
    with pytest.raises(SweepMemberError) as info:
        run_sweep(tiny_plan)
    assert info.value.epsilon == 0.04 and info.value.n == 64
    assert isinstance(info.value.cause, InstabilityError)
    assert "epsilon=0.04" in str(info.value)
