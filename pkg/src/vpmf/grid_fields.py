"""Uniform periodic grid on the flat torus T^d = (R/Z)^d.

Fields are plain numpy arrays: a scalar field has shape ``grid.shape`` and a
vector field has shape ``(d, *grid.shape)``.  Cells are centred at
``x_i = (k_i + 1/2) h`` and every integral is a midpoint sum.

The difference operators are chosen so that summation by parts holds exactly:

    integrate(f * laplacian(g)) == -h^d sum_i sum (D_i^+ f)(D_i^+ g)

which is what lets the energy and Brakke ledgers close up to time-stepping
error only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes

SNAPSHOT_MAGIC = b"VPMF"
_HEADER = struct.Struct("<4sIId")


@dataclass(frozen=True)
class TorusGrid:
    """Cell-centred grid with ``n`` cells per axis on the unit torus."""

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"d must be 2 or 3, got {self.d}")
        if self.n < 8:
            raise ValueError(f"n must be >= 8, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @cached_property
    def axis_coords(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    @cached_property
    def mesh(self) -> np.ndarray:
        """Cell-centre coordinates, shape ``(d, n, ..., n)``."""
        return np.stack(np.meshgrid(*([self.axis_coords] * self.d), indexing="ij"))

    def points(self) -> np.ndarray:
        """Cell centres as an ``(n**d, d)`` array in row-major order."""
        return self.mesh.reshape(self.d, -1).T

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def displacement(self, x0) -> np.ndarray:
        """Minimal-image displacement ``x - x0`` of every cell centre, in [-1/2, 1/2)."""
        x0 = np.asarray(x0, dtype=float).reshape((self.d,) + (1,) * self.d)
        return wrap(self.mesh - x0)

    def distance(self, x0) -> np.ndarray:
        return np.sqrt(np.sum(self.displacement(x0) ** 2, axis=0))

    # -- difference operators -------------------------------------------------

    def forward_diff(self, f: np.ndarray, axis: int) -> np.ndarray:
        return (np.roll(f, -1, axis=axis) - f) / self.h

    def backward_diff(self, f: np.ndarray, axis: int) -> np.ndarray:
        return (f - np.roll(f, 1, axis=axis)) / self.h

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        """Compact (2d+1)-point Laplacian, ``sum_i D_i^- D_i^+``."""
        out = -2.0 * self.d * f
        for ax in range(self.d):
            out = out + np.roll(f, 1, axis=ax) + np.roll(f, -1, axis=ax)
        return out / self.h**2

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Centred differences ``(f(x + h e_i) - f(x - h e_i)) / 2h``."""
        return np.stack(
            [(np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2.0 * self.h) for ax in range(self.d)]
        )

    def grad_dot(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Cellwise ``grad f . grad g`` as the mean of forward and backward products.

        Summed over the grid this equals ``sum (D^+ f)(D^+ g)``, and its
        variation with respect to ``g`` is ``-laplacian`` exactly.
        """
        out = np.zeros(np.broadcast_shapes(np.shape(f), np.shape(g)))
        for ax in range(self.d):
            out += self.forward_diff(f, ax) * self.forward_diff(g, ax)
            out += self.backward_diff(f, ax) * self.backward_diff(g, ax)
        return 0.5 * out

    def grad_sq(self, f: np.ndarray) -> np.ndarray:
        """Cellwise ``|grad f|^2`` consistent with :meth:`laplacian`."""
        return self.grad_dot(f, f)

    # -- reductions -------------------------------------------------------------

    def integrate(self, f: np.ndarray) -> float:
        return float(self.cell_volume * np.sum(f))

    def ball_mask(self, x0, r: float) -> np.ndarray:
        if not 0.0 < r < 0.5:
            raise ValueError(f"ball radius must lie in (0, 1/2), got {r}")
        # relative slack keeps cells at distance exactly r inside despite rounding
        return self.distance(x0) <= r * (1.0 + 1e-12)

    def ball_indicator_sum(self, f: np.ndarray, x0, r: float) -> float:
        """``h^d`` times the sum of ``f`` over cells within periodic distance ``r`` of ``x0``."""
        return float(self.cell_volume * np.sum(f[self.ball_mask(x0, r)]))

    # -- Fourier-diagonal solve ----------------------------------------------------

    @cached_property
    def stencil_symbol(self) -> np.ndarray:
        """Eigenvalues ``mu >= 0`` of ``-laplacian`` on the rfftn frequency grid."""
        k_full = np.arange(self.n)
        k_half = np.arange(self.n // 2 + 1)
        mu = np.zeros([self.n] * (self.d - 1) + [self.n // 2 + 1])
        for ax in range(self.d):
            k = k_half if ax == self.d - 1 else k_full
            shape = [1] * self.d
            shape[ax] = -1
            mu = mu + ((2.0 - 2.0 * np.cos(2.0 * np.pi * k * self.h)) / self.h**2).reshape(shape)
        return mu

    def helmholtz_solve(self, f: np.ndarray, a: float, b: float) -> np.ndarray:
        """Solve ``(a I - b laplacian) u = f`` exactly in the discrete Fourier basis."""
        if a <= 0:
            raise ValueError(f"helmholtz_solve needs a > 0, got a={a}")
        if b < 0:
            raise ValueError(f"helmholtz_solve needs b >= 0, got b={b}")
        fhat = np.fft.rfftn(f)
        return np.fft.irfftn(fhat / (a + b * self.stencil_symbol), s=self.shape, axes=tuple(range(self.d)))


def wrap(dx):
    """Map displacements onto [-1/2, 1/2)."""
    return dx - np.floor(dx + 0.5)


# -- snapshot files ---------------------------------------------------------------


def write_snapshot(path, grid: TorusGrid, values: np.ndarray, t: float) -> None:
    """Write ``VPMF`` | u32 d | u32 n | f64 t | n^d f64 values (little-endian, row-major)."""
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    payload = _HEADER.pack(SNAPSHOT_MAGIC, grid.d, grid.n, float(t))
    payload += np.ascontiguousarray(values, dtype="<f8").tobytes()
    atomic_write_bytes(Path(path), payload)


def read_snapshot(path) -> tuple[TorusGrid, np.ndarray, float]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, d, n, t = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    grid = TorusGrid(d, n)
    expected = _HEADER.size + 8 * n**d
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(grid.shape).astype(float)
    return grid, values, t
