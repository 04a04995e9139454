"""Space-time ledger of the epsilon-level Brakke identity.

For a nonnegative test function ``phi_test(x, t)`` the phase field satisfies,
exactly in the continuum,

    sigma * (mu_t2(phi_test) - mu_t1(phi_test))
        = int int [ -eps phi_test h^2 / 2 - eps phi_test phi_t^2 / 2
                    + phi_test lambda^2 W(phi) / eps
                    - eps grad phi_test . grad phi (h + lambda sqrt(2W) / eps)
                    + (d phi_test / dt) * e(phi) ]

with ``h = laplacian(phi) - W'(phi) / eps^2`` and ``e`` the energy density.
Every term is accumulated over a trajectory with midpoint quadrature in space
and left-endpoint quadrature in time, using ``phi_t = rhs(phi_n, lambda_n)``.
The spatial operators are the solver's own, and the gradient products use
:meth:`TorusGrid.grad_dot`, so the discrete identity holds exactly in the
semi-discrete limit and the residual measures time-stepping error only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .allen_cahn_solver import PhaseState, SolverParams, potential_w, potential_w_prime, rhs
from .diagnostics import SIGMA, energy_density
from .grid_fields import TorusGrid

PROFILES = ("constant", "hat")
TERMS = ("term_curv", "term_vel", "term_lambda", "term_transport", "term_dt")
# relative tolerance when matching window endpoints to step times
_T_TOL = 1e-9


class MissingStepsError(ValueError):
    """The trajectory does not cover the test window at every step."""


def bump(s):
    """``(1 - s^2)^2`` for ``s < 1`` and 0 otherwise."""
    s = np.asarray(s, dtype=float)
    return np.where(s < 1.0, (1.0 - s * s) ** 2, 0.0)


@dataclass(frozen=True)
class TestFunction:
    """``phi_test(x, t) = eta(t) * bump(|x - x0| / r)`` on the torus.

    ``eta`` is 1 for the ``constant`` profile and ``(4 s (1 - s))^2`` with
    ``s = (t - t1) / (t2 - t1)`` for ``hat``, which vanishes to first order at
    both window ends.
    """

    __test__ = False  # not a pytest class

    x0: tuple
    r: float
    t1: float
    t2: float
    profile: str = "constant"

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if not 0.0 < self.r < 0.5:
            raise ValueError(f"test radius must lie in (0, 1/2), got {self.r}")
        if not self.t2 > self.t1 >= 0.0:
            raise ValueError(f"test window needs 0 <= t1 < t2, got [{self.t1}, {self.t2}]")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown time profile {self.profile!r}; expected one of {PROFILES}")

    def eta(self, t: float) -> float:
        if self.profile == "constant":
            return 1.0
        s = min(max((t - self.t1) / (self.t2 - self.t1), 0.0), 1.0)
        return (4.0 * s * (1.0 - s)) ** 2

    def eta_dot(self, t: float) -> float:
        if self.profile == "constant":
            return 0.0
        T = self.t2 - self.t1
        s = min(max((t - self.t1) / T, 0.0), 1.0)
        return 32.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / T

    def spatial(self, grid: TorusGrid) -> np.ndarray:
        return bump(grid.distance(self.x0) / self.r)

    def spatial_gradient(self, grid: TorusGrid) -> np.ndarray:
        """Closed-form gradient of the spatial bump, shape ``(d, ...)``."""
        dx = grid.displacement(self.x0)
        s2 = np.sum(dx**2, axis=0) / self.r**2
        factor = np.where(s2 < 1.0, -4.0 * (1.0 - s2) / self.r**2, 0.0)
        return factor * dx

    def value(self, grid: TorusGrid, t: float) -> np.ndarray:
        return self.eta(t) * self.spatial(grid)

    def time_derivative(self, grid: TorusGrid, t: float) -> np.ndarray:
        return self.eta_dot(t) * self.spatial(grid)

    @property
    def sup_norm(self) -> float:
        """``max phi_test = max eta`` (attained at x0 and, for the hat, at the window midpoint)."""
        return 1.0

    def to_dict(self) -> dict:
        return {"x0": list(self.x0), "r": self.r, "t1": self.t1, "t2": self.t2, "profile": self.profile}


@dataclass
class BrakkeReport:
    test: TestFunction
    dim: int
    lhs: float
    terms: dict
    # step times actually spanned (window endpoints snapped to the trajectory)
    t_start: float
    t_end: float
    n_steps: int
    weak_C: float | None = None

    @property
    def residual(self) -> float:
        return self.lhs - sum(self.terms[k] for k in TERMS)

    @property
    def normalized_residual(self) -> float:
        scale = abs(self.lhs) + sum(abs(self.terms[k]) for k in TERMS)
        return abs(self.residual) / scale if scale > 0 else 0.0

    def _scale(self) -> float:
        return self.test.r ** (self.dim - 1) * (1.0 + self.test.t2 - self.test.t1) * self.test.sup_norm

    @property
    def C_emp(self) -> float:
        return self.terms["term_lambda"] / self._scale()

    def weak_margin(self, C: float) -> float:
        flow = sum(self.terms[k] for k in ("term_curv", "term_vel", "term_transport", "term_dt"))
        return C * self._scale() + flow - self.lhs

    def to_json(self) -> dict:
        out = {
            "test": self.test.to_dict(),
            "window": {"t_start": self.t_start, "t_end": self.t_end, "steps": self.n_steps},
            "terms": {"lhs": self.lhs, **self.terms},
            "residual": self.residual,
            "normalized_residual": self.normalized_residual,
            "C_emp": self.C_emp,
            "weak_margin": None,
        }
        if self.weak_C is not None:
            out["weak_C"] = self.weak_C
            out["weak_margin"] = self.weak_margin(self.weak_C)
        return out


class _Ledger:
    """Running sums for one test function."""

    def __init__(self, test: TestFunction, params: SolverParams):
        self.test = test
        self.params = params
        self.chi = test.spatial(params.grid)
        self.prev: PhaseState | None = None
        self.start: PhaseState | None = None
        self.mu_start = 0.0
        self.sums = dict.fromkeys(TERMS, 0.0)
        self.n_steps = 0
        self.done = False

    def _in_window(self, t: float) -> bool:
        tol = _T_TOL * max(1.0, self.test.t2)
        return self.test.t1 - tol <= t <= self.test.t2 + tol

    def feed(self, state: PhaseState, fields) -> None:
        if self.done or not self._in_window(state.t):
            if self.prev is not None:
                self.done = True
            return
        grid, eps = self.params.grid, self.params.epsilon
        if self.prev is None:
            self.start = state
            self.mu_start = grid.integrate(self.test.value(grid, state.t) * energy_density(grid, state.phi, eps))
        else:
            if state.step != self.prev.step + 1:
                raise MissingStepsError(
                    f"trajectory jumps from step {self.prev.step} (t={self.prev.t:.6g}) to step "
                    f"{state.step} (t={state.t:.6g}) inside the window [{self.test.t1}, {self.test.t2}]"
                )
            self._accumulate(self.prev, state.t - self.prev.t, fields(self.prev))
            self.n_steps += 1
        self.prev = state

    def _accumulate(self, s: PhaseState, dt: float, f: "_StateFields") -> None:
        grid, eps, lam = self.params.grid, self.params.epsilon, s.lam
        eta = self.test.eta(s.t)
        test = eta * self.chi
        terms = {
            "term_curv": -eps * grid.integrate(test * f.curv_sq) / 2.0,
            "term_vel": -eps * grid.integrate(test * f.phi_t_sq) / 2.0,
            "term_lambda": lam**2 * grid.integrate(test * f.w) / eps,
            "term_transport": -eps * eta * grid.integrate(grid.grad_dot(self.chi, s.phi) * f.phi_t),
            "term_dt": self.test.eta_dot(s.t) * grid.integrate(self.chi * f.density),
        }
        for k, v in terms.items():
            self.sums[k] += dt * v

    def report(self) -> BrakkeReport:
        test, grid, eps = self.test, self.params.grid, self.params.epsilon
        if self.prev is None or self.start is None:
            raise MissingStepsError(f"no trajectory state inside the window [{test.t1}, {test.t2}]")
        # tolerate snapping to within one step of each end
        dt_tol = max(self.params.dt, 0.0) * (1.0 + 1e-9)
        if self.start.t - test.t1 > dt_tol or test.t2 - self.prev.t > dt_tol:
            raise MissingStepsError(
                f"trajectory covers [{self.start.t:.6g}, {self.prev.t:.6g}], "
                f"not the window [{test.t1}, {test.t2}]"
            )
        mu_end = grid.integrate(test.value(grid, self.prev.t) * energy_density(grid, self.prev.phi, eps))
        return BrakkeReport(
            test=test,
            dim=grid.d,
            lhs=mu_end - self.mu_start,
            terms=dict(self.sums),
            t_start=self.start.t,
            t_end=self.prev.t,
            n_steps=self.n_steps,
        )


class _StateFields:
    """Test-independent integrands of one state, shared by all ledgers."""

    def __init__(self, state: PhaseState, params: SolverParams):
        grid, eps, phi = params.grid, params.epsilon, state.phi
        curv = grid.laplacian(phi) - potential_w_prime(phi) / eps**2
        self.curv_sq = curv**2
        self.phi_t = rhs(phi, state.lam, params)
        self.phi_t_sq = self.phi_t**2
        self.w = potential_w(phi)
        self.density = energy_density(grid, phi, eps)


class BrakkeAccumulator:
    """Solver observer that evaluates several test functions in one pass.

    Must see every step inside each window (``record_stride = 1`` there).
    """

    def __init__(self, tests: Iterable[TestFunction], params: SolverParams):
        self.params = params
        self._ledgers = [_Ledger(t, params) for t in tests]
        self._cache: tuple | None = None

    def _fields(self, state: PhaseState) -> _StateFields:
        if self._cache is None or self._cache[0] is not state:
            self._cache = (state, _StateFields(state, self.params))
        return self._cache[1]

    def __call__(self, state: PhaseState) -> None:
        for led in self._ledgers:
            led.feed(state, self._fields)

    def reports(self) -> list[BrakkeReport]:
        return [led.report() for led in self._ledgers]


def _check_finite(report: BrakkeReport) -> None:
    vals = [report.lhs, *report.terms.values()]
    if not all(np.isfinite(v) for v in vals):
        raise FloatingPointError(f"non-finite Brakke term for test {report.test}")


def check_identity(trajectory: Iterable[PhaseState], test: TestFunction, params: SolverParams) -> BrakkeReport:
    """Accumulate every term of the identity for ``test`` along ``trajectory``.

    ``lhs`` is reported as ``sigma * (mu_t2 - mu_t1)``, which is the unscaled
    energy-density integral.  Raises :class:`MissingStepsError` if a step inside
    the window is absent.
    """
    acc = BrakkeAccumulator([test], params)
    for state in trajectory:
        acc(state)
    report = acc.reports()[0]
    _check_finite(report)
    return report


def check_weak_inequality(
    trajectory: Iterable[PhaseState], test: TestFunction, params: SolverParams, C: float
) -> tuple[float, float]:
    """Return ``(weak_margin, C_emp)`` for the corrected inequality with constant ``C``."""
    report = check_identity(trajectory, test, params)
    return report.weak_margin(C), report.C_emp


def lambda_l2_report(trajectory, t1: float, t2: float) -> tuple[float, float]:
    """Left-endpoint ``sum dt * lambda^2`` over ``[t1, t2]`` and its ratio to ``1 + t2 - t1``.

    ``trajectory`` is any sequence of objects with ``t`` and ``lam`` attributes
    (phase states or diagnostics records).
    """
    pts = [(float(s.t), float(s.lam)) for s in trajectory]
    tol = _T_TOL * max(1.0, t2)
    pts = [(t, lam) for t, lam in pts if t1 - tol <= t <= t2 + tol]
    total = 0.0
    for (ta, la), (tb, _) in zip(pts, pts[1:]):
        total += (tb - ta) * la * la
    return total, total / (1.0 + t2 - t1)


def sigma_mu_difference(state_a: PhaseState, state_b: PhaseState, test: TestFunction, params: SolverParams) -> float:
    """``sigma * (mu_b(phi_test(t_b)) - mu_a(phi_test(t_a)))`` computed directly from two states."""
    grid, eps = params.grid, params.epsilon
    mu = [
        grid.integrate(test.value(grid, s.t) * energy_density(grid, s.phi, eps)) / SIGMA for s in (state_a, state_b)
    ]
    return SIGMA * (mu[1] - mu[0])


__all__ = [
    "BrakkeAccumulator",
    "BrakkeReport",
    "MissingStepsError",
    "TestFunction",
    "bump",
    "check_identity",
    "check_weak_inequality",
    "lambda_l2_report",
    "sigma_mu_difference",
]
