"""Energies, diffuse surface measure and related observables of a phase state."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .allen_cahn_solver import PhaseState, SolverParams, k_of, potential_w, potential_w_prime, rhs, sqrt_two_w
from .grid_fields import TorusGrid
from .interface import extract_interface

# integral of sqrt(2W) over [-1, 1] for W = (1 - s^2)^2 / 2
SIGMA = 4.0 / 3.0
DENSITY_RADII = (0.05, 0.1, 0.2, 0.4)
CSV_COLUMNS = (
    "t",
    "E_S",
    "E_P",
    "E_total",
    "lambda",
    "vol_k",
    "vol_psi",
    "xi_total",
    "mu_total",
    "density_ratio_sup",
)


def omega(m: int) -> float:
    """Volume of the unit ball in R^m (m = 1, 2)."""
    return {1: 2.0, 2: np.pi}[m]


def energy_density(grid: TorusGrid, phi: np.ndarray, eps: float) -> np.ndarray:
    return eps * grid.grad_sq(phi) / 2.0 + potential_w(phi) / eps


def surface_energy(state: PhaseState, params: SolverParams) -> float:
    return params.grid.integrate(energy_density(params.grid, state.phi, params.epsilon))


def penalty_energy(state: PhaseState, params: SolverParams) -> float:
    if not params.volume_constraint:
        return 0.0
    deficit = state.volume_target - params.grid.integrate(k_of(state.phi))
    return deficit**2 / (2.0 * params.epsilon**params.alpha)


def total_energy(state: PhaseState, params: SolverParams) -> float:
    return surface_energy(state, params) + penalty_energy(state, params)


def mu_measure(state: PhaseState, params: SolverParams, phi_test) -> float:
    """``mu_t(phi_test) = (1/sigma) integral phi_test * energy density``."""
    dens = energy_density(params.grid, state.phi, params.epsilon)
    return params.grid.integrate(np.asarray(phi_test) * dens) / SIGMA


def discrepancy(state: PhaseState, params: SolverParams) -> tuple[np.ndarray, float]:
    """Discrepancy density ``(eps|grad phi|^2/2 - W/eps) / sigma`` and its total variation."""
    grid, eps = params.grid, params.epsilon
    dens = (eps * grid.grad_sq(state.phi) / 2.0 - potential_w(state.phi) / eps) / SIGMA
    return dens, grid.integrate(np.abs(dens))


def approx_curvature(state: PhaseState, params: SolverParams) -> np.ndarray:
    return params.grid.laplacian(state.phi) - potential_w_prime(state.phi) / params.epsilon**2


def phase_velocity(state: PhaseState, params: SolverParams) -> np.ndarray:
    """``phi_t`` taken from the PDE right-hand side at the current state."""
    return rhs(state.phi, state.lam, params)


def approx_velocity(state: PhaseState, params: SolverParams) -> np.ndarray:
    """``-phi_t / |grad phi| * grad phi / |grad phi|``, zero where the gradient vanishes."""
    grid = params.grid
    grad = grid.gradient(state.phi)
    norm2 = np.sum(grad**2, axis=0)
    active = norm2 >= (1e-12 / grid.h) ** 2
    scale = np.zeros_like(norm2)
    scale[active] = -phase_velocity(state, params)[active] / norm2[active]
    return grad * scale


def volume_k(state: PhaseState, params: SolverParams) -> float:
    return params.grid.integrate(k_of(state.phi))


def volume_psi(state: PhaseState, params: SolverParams) -> float:
    """Integral of ``psi = (phi + 1) / 2``."""
    return params.grid.integrate(0.5 * (state.phi + 1.0))


def modica_mortola_measure(state: PhaseState, params: SolverParams, phi_test) -> float:
    """``(1/sigma) integral phi_test sqrt(2W(phi)) |grad phi|`` with the energy's discrete gradient norm."""
    grid = params.grid
    dens = sqrt_two_w(state.phi) * np.sqrt(grid.grad_sq(state.phi))
    return grid.integrate(np.asarray(phi_test) * dens) / SIGMA


# -- density ratios ----------------------------------------------------------------


@lru_cache(maxsize=64)
def _ball_kernel_hat(grid: TorusGrid, r: float) -> np.ndarray:
    if not 0.0 < r < 0.5:
        raise ValueError(f"ball radius must lie in (0, 1/2), got {r}")
    off = np.minimum(np.arange(grid.n), grid.n - np.arange(grid.n)).astype(float)
    sq = np.zeros(grid.shape)
    for ax in range(grid.d):
        shape = [1] * grid.d
        shape[ax] = -1
        sq = sq + (off**2).reshape(shape)
    kernel = (sq * grid.h**2 <= (r * (1.0 + 1e-12)) ** 2).astype(float)
    return np.fft.rfftn(kernel)


def ball_measure_field(grid: TorusGrid, density: np.ndarray, r: float) -> np.ndarray:
    """``h^d * sum`` of ``density`` over the closed r-ball around every cell centre."""
    axes = tuple(range(grid.d))
    out = np.fft.irfftn(np.fft.rfftn(density) * _ball_kernel_hat(grid, float(r)), s=grid.shape, axes=axes)
    return grid.cell_volume * out


def _sample_indices(grid: TorusGrid, samples) -> tuple:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    idx = np.floor(np.mod(samples, 1.0) / grid.h).astype(int) % grid.n
    return tuple(idx.T)


def density_ratio(state: PhaseState, params: SolverParams, x0, r: float) -> float:
    """``mu_t(B_r(x0)) / (omega_{d-1} r^{d-1})``."""
    grid = params.grid
    dens = energy_density(grid, state.phi, params.epsilon) / SIGMA
    return grid.ball_indicator_sum(dens, x0, r) / (omega(grid.d - 1) * r ** (grid.d - 1))


def density_ratio_sup_field(grid: TorusGrid, phi: np.ndarray, eps: float, radii, samples) -> float:
    """Sup of the density ratio over ``samples`` (snapped to their cells) and ``radii``."""
    if len(samples) == 0:
        raise ValueError("density_ratio_sup needs at least one sample point")
    dens = energy_density(grid, phi, eps) / SIGMA
    idx = _sample_indices(grid, samples)
    best = 0.0
    for r in radii:
        vals = ball_measure_field(grid, dens, r)[idx] / (omega(grid.d - 1) * r ** (grid.d - 1))
        best = max(best, float(np.max(vals)))
    return best


def density_ratio_sup(state: PhaseState, params: SolverParams, radii, samples) -> float:
    return density_ratio_sup_field(params.grid, state.phi, params.epsilon, radii, samples)


def default_samples(grid: TorusGrid, phi: np.ndarray, n_interface: int = 32, n_random: int = 32, seed: int = 0):
    """Cell centres adjacent to the zero level set plus seeded random cell centres."""
    positive = phi > 0
    crossing = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.d):
        crossing |= positive != np.roll(positive, -1, axis=ax)
    flat = np.flatnonzero(crossing)
    if flat.size > n_interface:
        flat = flat[np.linspace(0, flat.size - 1, n_interface).round().astype(int)]
    rng = np.random.default_rng(seed)
    rand = rng.integers(0, grid.n**grid.d, size=n_random)
    cells = np.concatenate([flat, rand])
    return np.stack(np.unravel_index(cells, grid.shape), axis=-1).astype(float) * grid.h + 0.5 * grid.h


# -- records -------------------------------------------------------------------------


@dataclass
class DiagnosticsRecord:
    t: float
    E_S: float
    E_P: float
    E_total: float
    lam: float
    vol_k: float
    vol_psi: float
    xi_total: float
    mu_total: float
    density_ratio_sup: float
    interface_points: list = field(default_factory=list, repr=False)

    def as_row(self) -> list[float]:
        return [
            self.t,
            self.E_S,
            self.E_P,
            self.E_total,
            self.lam,
            self.vol_k,
            self.vol_psi,
            self.xi_total,
            self.mu_total,
            self.density_ratio_sup,
        ]

    def csv_line(self) -> str:
        return ",".join(repr(float(v)) for v in self.as_row())

    def get(self, name: str) -> float:
        return dict(zip(CSV_COLUMNS, self.as_row()))[name]


def csv_header() -> str:
    return ",".join(CSV_COLUMNS)


def compute_record(
    state: PhaseState,
    params: SolverParams,
    samples=None,
    radii=DENSITY_RADII,
    with_interface: bool = False,
) -> DiagnosticsRecord:
    """All scalar observables of ``state``; the density sup is skipped (NaN) without samples."""
    grid, eps = params.grid, params.epsilon
    dens = energy_density(grid, state.phi, eps)
    e_s = grid.integrate(dens)
    e_p = penalty_energy(state, params)
    _, xi_total = discrepancy(state, params)
    if samples is not None:
        ratio = density_ratio_sup_field(grid, state.phi, eps, radii, samples)
    else:
        ratio = float("nan")
    return DiagnosticsRecord(
        t=state.t,
        E_S=e_s,
        E_P=e_p,
        E_total=e_s + e_p,
        lam=state.lam,
        vol_k=volume_k(state, params),
        vol_psi=volume_psi(state, params),
        xi_total=xi_total,
        mu_total=e_s / SIGMA,
        density_ratio_sup=ratio,
        interface_points=extract_interface(state.phi, grid) if with_interface else [],
    )


class Recorder:
    """Observer that stores a :class:`DiagnosticsRecord` per call.

    The density sample set is fixed from the first observed state.
    """

    def __init__(self, params: SolverParams, radii=DENSITY_RADII, with_density=True, with_interface=False):
        self.params = params
        self.radii = tuple(radii)
        self.with_density = with_density
        self.with_interface = with_interface
        self.samples = None
        self.records: list[DiagnosticsRecord] = []

    def __call__(self, state: PhaseState) -> None:
        if self.with_density and self.samples is None:
            self.samples = default_samples(self.params.grid, state.phi)
        self.records.append(
            compute_record(state, self.params, self.samples, self.radii, with_interface=self.with_interface)
        )

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name) for r in self.records])
