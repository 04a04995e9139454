"""Time integration of the volume-penalised Allen-Cahn equation.

The stepped equation is

    phi_t = laplacian(phi) - W'(phi) / eps^2 + (lambda / eps) * sqrt(2 W(phi))

with the nonlocal multiplier

    lambda(t) = eps^(-alpha) * (V0 - integral k(phi(t))),   V0 = integral k(phi_0).

Two schemes are offered.  ``explicit`` is forward Euler on the whole right-hand
side.  ``imex`` treats the Laplacian implicitly (one Fourier-diagonal solve per
step) and the reaction and multiplier terms explicitly.  In both, lambda is
evaluated at the old time level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Iterable

import numpy as np

from .grid_fields import TorusGrid

log = logging.getLogger(__name__)

SCHEMES = ("explicit", "imex")
OVERSHOOT_TOL = 0.05
CFL_SAFETY = 0.9
# sup |W''| on [-1, 1]
_W2_SUP = 4.0


def potential_w(s):
    """Double well ``(1 - s^2)^2 / 2``."""
    return 0.5 * (1.0 - s * s) ** 2


def potential_w_prime(s):
    return -2.0 * s * (1.0 - s * s)


def sqrt_two_w(s):
    """``sqrt(2 W(s)) = |1 - s^2|``, defined for every real ``s``."""
    return np.abs(1.0 - s * s)


def k_of(s):
    """Antiderivative of ``sqrt(2W)`` on [-1, 1]: ``s - s^3 / 3``."""
    return s - s**3 / 3.0


class InstabilityError(RuntimeError):
    """A step produced NaN or left the band |phi| <= 1 + OVERSHOOT_TOL."""

    def __init__(self, message: str, t: float, last_state: "PhaseState | None" = None):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t
        self.last_state = last_state


def min_resolved_epsilon(grid: TorusGrid) -> float:
    """Smallest admissible eps: the band |x| < eps (width 2 eps) spans at least 4 cells."""
    return 2.0 * grid.h


def check_resolution(epsilon: float, grid: TorusGrid) -> None:
    if epsilon < min_resolved_epsilon(grid) * (1.0 - 1e-12):
        raise ValueError(
            f"precondition 'epsilon >= 4h' violated: the interface band of width 2*epsilon "
            f"must span at least 4 cells (epsilon={epsilon:g}, h={grid.h:g}, "
            f"need epsilon >= {min_resolved_epsilon(grid):g})"
        )


def cfl_limit(epsilon: float, grid: TorusGrid, scheme: str) -> float:
    """Largest stable dt: ``min(h^2 / 2d, eps^2 / 8)`` explicit, ``eps^2 / 8`` imex."""
    reaction = 0.5 * epsilon**2 / _W2_SUP
    if scheme == "explicit":
        return min(grid.h**2 / (2 * grid.d), reaction)
    if scheme == "imex":
        return reaction
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


@dataclass(frozen=True)
class SolverParams:
    epsilon: float
    alpha: float
    dt: float
    t_final: float
    scheme: str
    grid: TorusGrid
    # False drops the multiplier entirely (plain Allen-Cahn, lambda == 0)
    volume_constraint: bool = True
    force: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.t_final < 0:
            raise ValueError(f"t_final must be >= 0, got {self.t_final}")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        check_resolution(self.epsilon, self.grid)
        limit = self.cfl
        if self.dt > limit * (1.0 + 1e-12) and not self.force:
            raise ValueError(
                f"precondition 'dt <= CFL' violated for the {self.scheme} scheme: "
                f"dt={self.dt:g} > {limit:g} (pass force=True to override)"
            )

    @property
    def cfl(self) -> float:
        return cfl_limit(self.epsilon, self.grid, self.scheme)

    @classmethod
    def auto(cls, epsilon, alpha, t_final, grid, scheme="explicit", safety=CFL_SAFETY, **kw):
        """Parameters with ``dt = safety * CFL``."""
        return cls(epsilon, alpha, safety * cfl_limit(epsilon, grid, scheme), t_final, scheme, grid, **kw)

    def with_dt(self, dt: float) -> "SolverParams":
        return replace(self, dt=dt)

    @property
    def n_steps(self) -> int:
        """Number of steps to reach ``t_final``; the last one is shortened if needed."""
        return int(np.ceil(self.t_final / self.dt - 1e-9)) if self.t_final > 0 else 0


@dataclass
class PhaseState:
    phi: np.ndarray
    t: float
    lam: float
    volume_target: float
    step: int = 0


def lambda_eps(phi: np.ndarray, volume_target: float, params: SolverParams) -> float:
    """``eps^(-alpha) * (V0 - integral k(phi))``; zero without the volume constraint."""
    if not params.volume_constraint:
        return 0.0
    return (volume_target - params.grid.integrate(k_of(phi))) / params.epsilon**params.alpha


def initial_state(profile, params: SolverParams) -> PhaseState:
    if profile.grid != params.grid:
        raise ValueError(f"profile grid {profile.grid} does not match solver grid {params.grid}")
    if abs(profile.epsilon - params.epsilon) > 1e-15 * params.epsilon:
        raise ValueError(f"profile epsilon {profile.epsilon} != solver epsilon {params.epsilon}")
    phi = np.array(profile.phi0, dtype=float)
    return PhaseState(phi, 0.0, lambda_eps(phi, profile.volume_target, params), profile.volume_target)


def reaction(phi: np.ndarray, lam: float, params: SolverParams) -> np.ndarray:
    """Non-diffusive part ``-W'(phi)/eps^2 + (lambda/eps) sqrt(2W(phi))``."""
    eps = params.epsilon
    out = -potential_w_prime(phi) / eps**2
    if lam != 0.0:
        out = out + (lam / eps) * sqrt_two_w(phi)
    return out


def rhs(phi: np.ndarray, lam: float, params: SolverParams) -> np.ndarray:
    return params.grid.laplacian(phi) + reaction(phi, lam, params)


def step(state: PhaseState, params: SolverParams, dt: float | None = None) -> PhaseState:
    dt = params.dt if dt is None else dt
    phi = state.phi
    if params.scheme == "explicit":
        new = phi + dt * rhs(phi, state.lam, params)
    else:
        new = params.grid.helmholtz_solve(phi / dt + reaction(phi, state.lam, params), 1.0 / dt, 1.0)
    t_new = state.t + dt
    if not np.all(np.isfinite(new)):
        raise InstabilityError("non-finite value in phi", t_new, state)
    peak = float(np.max(np.abs(new)))
    if peak > 1.0 + OVERSHOOT_TOL:
        raise InstabilityError(f"|phi| reached {peak:.4f} > {1 + OVERSHOOT_TOL}", t_new, state)
    return PhaseState(new, t_new, lambda_eps(new, state.volume_target, params), state.volume_target, state.step + 1)


Observer = Callable[[PhaseState], None]


def run(
    params: SolverParams,
    profile,
    observers: Iterable[Observer] = (),
    record_stride: int = 1,
) -> PhaseState:
    """Integrate to ``t_final``, calling each observer on step 0 and every ``record_stride`` steps.

    The final state is always observed.  Observers must not mutate the state.
    """
    if record_stride < 1:
        raise ValueError(f"record_stride must be >= 1, got {record_stride}")
    observers = list(observers)
    state = initial_state(profile, params)
    for obs in observers:
        obs(state)
    n_steps = params.n_steps
    for i in range(n_steps):
        dt = min(params.dt, params.t_final - state.t) if i == n_steps - 1 else params.dt
        state = step(state, params, dt)
        if state.step % record_stride == 0 or i == n_steps - 1:
            for obs in observers:
                obs(state)
    log.debug("run finished at t=%g after %d steps", state.t, state.step)
    return state
