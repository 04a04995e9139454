"""Phase-field simulation of volume-preserving mean curvature flow on the flat torus.

The solver steps a nonlocal Allen-Cahn equation whose multiplier penalises
drift of the conserved phase volume.  Around it sit diagnostics for the
diffuse surface measure, a space-time ledger for the epsilon-level Brakke
identity, exact circle oracles in two dimensions and an epsilon-sweep harness.
"""

from .allen_cahn_solver import InstabilityError, PhaseState, SolverParams, run, step
from .brakke import BrakkeAccumulator, BrakkeReport, TestFunction, check_identity, check_weak_inequality
from .diagnostics import DiagnosticsRecord, Recorder, compute_record
from .grid_fields import TorusGrid, read_snapshot, write_snapshot
from .initial_data import InitialProfile, Region, build_phi0
from .oracle2d import CircleSystem, circle_rhs, evolve_circles
from .sweep import SweepPlan, TrendAssertion, run_sweep

__version__ = "0.1.0"

__all__ = [
    "BrakkeAccumulator",
    "BrakkeReport",
    "CircleSystem",
    "DiagnosticsRecord",
    "InitialProfile",
    "InstabilityError",
    "PhaseState",
    "Recorder",
    "Region",
    "SolverParams",
    "SweepPlan",
    "TestFunction",
    "TorusGrid",
    "TrendAssertion",
    "build_phi0",
    "check_identity",
    "check_weak_inequality",
    "circle_rhs",
    "compute_record",
    "evolve_circles",
    "read_snapshot",
    "run",
    "run_sweep",
    "step",
    "write_snapshot",
]
