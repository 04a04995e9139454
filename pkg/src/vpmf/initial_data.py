"""Well-prepared initial data from analytic regions.

``phi_0 = tanh(sdist(x) / eps)`` with ``sdist`` the signed distance to the
region boundary (positive inside).  For ``W(s) = (1 - s^2)^2 / 2`` the tanh
profile is the exact 1-D heteroclinic, so the gradient and potential halves of
the energy density agree pointwise in the continuum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ellipe

from .allen_cahn_solver import check_resolution, k_of, potential_w
from .grid_fields import TorusGrid, wrap

KINDS = ("ball", "two_balls", "ellipse", "stripe")
CLIP = 1.0 - 1e-15


@dataclass(frozen=True)
class Region:
    """Analytic region on the torus.

    ``stripe`` is the slab ``|x_1 - c_1| < half_width`` (periodic in x_1), bounded by
    two flat interfaces normal to the first axis.  ``ellipse`` is axis-aligned and
    two-dimensional only.
    """

    kind: str
    centers: tuple = ()
    radii: tuple = ()
    semi_axes: tuple = ()
    half_width: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(tuple(float(v) for v in c) for c in self.centers))
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        object.__setattr__(self, "semi_axes", tuple(float(a) for a in self.semi_axes))
        object.__setattr__(self, "half_width", float(self.half_width))
        if self.kind not in KINDS:
            raise ValueError(f"unknown region kind {self.kind!r}; expected one of {KINDS}")

    # -- constructors ----------------------------------------------------------

    @classmethod
    def ball(cls, center, radius):
        return cls("ball", centers=(tuple(center),), radii=(radius,))

    @classmethod
    def two_balls(cls, center1, radius1, center2, radius2):
        return cls("two_balls", centers=(tuple(center1), tuple(center2)), radii=(radius1, radius2))

    @classmethod
    def ellipse(cls, center, semi_axes):
        return cls("ellipse", centers=(tuple(center),), semi_axes=tuple(semi_axes))

    @classmethod
    def stripe(cls, half_width, center=0.5, d=2):
        return cls("stripe", centers=((center,) + (0.5,) * (d - 1),), half_width=half_width)

    # -- checks ----------------------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.centers[0])

    def validate(self, d: int, epsilon: float | None = None) -> None:
        """Raise ValueError if the region cannot be represented on T^d."""
        expected = {"ball": (1, 1), "two_balls": (2, 2), "ellipse": (1, 0), "stripe": (1, 0)}[self.kind]
        if len(self.centers) != expected[0] or len(self.radii) != expected[1]:
            raise ValueError(
                f"region {self.kind!r} needs {expected[0]} center(s) and {expected[1]} radii, "
                f"got {len(self.centers)} and {len(self.radii)}"
            )
        if any(len(c) != d for c in self.centers):
            raise ValueError(f"region centers must have {d} coordinates")
        if any(r <= 0 for r in self.radii):
            raise ValueError("region radii must be positive")
        if self.kind == "ball" and self.radii[0] >= 0.5:
            raise ValueError("ball radius must be < 1/2 to embed in the torus")
        if self.kind == "ellipse":
            if d != 2:
                raise ValueError("ellipse regions are two-dimensional only")
            if len(self.semi_axes) != 2 or min(self.semi_axes) <= 0 or max(self.semi_axes) >= 0.5:
                raise ValueError("ellipse needs two semi-axes in (0, 1/2)")
        if self.kind == "stripe" and not 0.0 < self.half_width < 0.5:
            raise ValueError("stripe half_width must lie in (0, 1/2)")
        if self.kind == "two_balls":
            gap = self.gap()
            if gap <= 0:
                raise ValueError("two_balls components overlap")
            if epsilon is not None and gap < 4 * epsilon:
                raise ValueError(f"two_balls separation {gap:g} < 4*epsilon = {4 * epsilon:g}")
            if max(self.radii) >= 0.5:
                raise ValueError("two_balls radii must be < 1/2 to embed in the torus")

    def gap(self) -> float:
        """Boundary-to-boundary distance of the two_balls components (minimal image)."""
        c1, c2 = (np.asarray(c) for c in self.centers)
        return float(np.linalg.norm(wrap(c2 - c1)) - sum(self.radii))

    # -- exact geometry --------------------------------------------------------

    def volume(self) -> float:
        d = self.dim
        if self.kind in ("ball", "two_balls"):
            unit = np.pi if d == 2 else 4.0 * np.pi / 3.0
            return float(sum(unit * r**d for r in self.radii))
        if self.kind == "ellipse":
            a, b = self.semi_axes
            return float(np.pi * a * b)
        return 2.0 * self.half_width

    def perimeter(self) -> float:
        """(d-1)-dimensional measure of the boundary."""
        d = self.dim
        if self.kind in ("ball", "two_balls"):
            unit = 2.0 * np.pi if d == 2 else 4.0 * np.pi
            return float(sum(unit * r ** (d - 1) for r in self.radii))
        if self.kind == "ellipse":
            a, b = sorted(self.semi_axes, reverse=True)
            return float(4.0 * a * ellipe(1.0 - (b / a) ** 2))
        return 2.0


def signed_distance(region: Region, x) -> np.ndarray:
    """Signed distance to the region boundary, positive inside.

    ``x`` has shape ``(..., d)``.  Exact for ball, two_balls and stripe; the
    ellipse distance is computed by projecting onto the ellipse (bisection on the
    Lagrange parameter of the closest-point problem), accurate to rounding.
    """
    x = np.asarray(x, dtype=float)
    if region.kind == "ball":
        return region.radii[0] - _dist(x, region.centers[0])
    if region.kind == "two_balls":
        return np.maximum(*(r - _dist(x, c) for c, r in zip(region.centers, region.radii)))
    if region.kind == "stripe":
        return region.half_width - np.abs(wrap(x[..., 0] - region.centers[0][0]))
    dx = wrap(x - np.asarray(region.centers[0]))
    return _ellipse_signed_distance(region.semi_axes, dx[..., 0], dx[..., 1])


def _dist(x, c):
    return np.sqrt(np.sum(wrap(x - np.asarray(c)) ** 2, axis=-1))


def _ellipse_signed_distance(semi_axes, px, py, iterations=160):
    a, b = semi_axes
    if a < b:
        a, b, px, py = b, a, py, px
    y0 = np.abs(np.asarray(px, dtype=float))
    y1 = np.abs(np.asarray(py, dtype=float))
    inside = (y0 / a) ** 2 + (y1 / b) ** 2 < 1.0
    dist = np.empty(np.broadcast(y0, y1).shape)

    gen = (y0 > 0) & (y1 > 0)
    if np.any(gen):
        z0, z1 = y0[gen] / a, y1[gen] / b
        g = z0**2 + z1**2 - 1.0
        r0 = (a / b) ** 2
        n0 = r0 * z0
        lo = z1 - 1.0
        hi = np.where(g < 0, 0.0, np.hypot(n0, z1) - 1.0)
        for _ in range(iterations):
            s = 0.5 * (lo + hi)
            f = (n0 / (s + r0)) ** 2 + (z1 / (s + 1.0)) ** 2 - 1.0
            lo = np.where(f > 0, s, lo)
            hi = np.where(f < 0, s, hi)
            hi = np.where(f == 0, s, hi)
            lo = np.where(f == 0, s, lo)
        s = 0.5 * (lo + hi)
        x0 = r0 * y0[gen] / (s + r0)
        x1 = y1[gen] / (s + 1.0)
        dist[gen] = np.hypot(x0 - y0[gen], x1 - y1[gen])

    on_minor = (y0 == 0) & (y1 > 0)
    dist[on_minor] = np.abs(y1[on_minor] - b)

    on_major = y1 == 0
    if np.any(on_major):
        yy = y0[on_major]
        denom = a * a - b * b
        near = a * yy < denom
        xde = np.where(near, a * yy / denom if denom > 0 else 0.0, 1.0)
        xa = a * xde
        xb = b * np.sqrt(np.clip(1.0 - xde**2, 0.0, None))
        dist[on_major] = np.where(near, np.hypot(xa - yy, xb), np.abs(yy - a))

    return np.where(inside, dist, -dist)


@dataclass
class InitialProfile:
    epsilon: float
    phi0: np.ndarray
    volume_target: float
    grid: TorusGrid
    region: Region | None = field(default=None)


def build_phi0(region: Region, epsilon: float, grid: TorusGrid) -> InitialProfile:
    check_resolution(epsilon, grid)
    region.validate(grid.d, epsilon)
    sd = signed_distance(region, np.moveaxis(grid.mesh, 0, -1))
    phi0 = np.clip(np.tanh(sd / epsilon), -CLIP, CLIP)
    return InitialProfile(epsilon, phi0, grid.integrate(k_of(phi0)), grid, region)


def profile_from_field(phi0: np.ndarray, epsilon: float, grid: TorusGrid) -> InitialProfile:
    """Wrap an arbitrary field (e.g. a loaded snapshot) as initial data."""
    phi0 = np.asarray(phi0, dtype=float)
    return InitialProfile(epsilon, phi0, grid.integrate(k_of(phi0)), grid, None)


def preparedness_tolerance(epsilon: float, grid: TorusGrid) -> float:
    return 10.0 * grid.h**2 / epsilon**3


def preparedness_excess(profile: InitialProfile) -> np.ndarray:
    """Pointwise ``eps |grad phi0|^2 / 2 - W(phi0) / eps``; well-prepared data is <= tol."""
    eps, grid, phi = profile.epsilon, profile.grid, profile.phi0
    return eps * grid.grad_sq(phi) / 2.0 - potential_w(phi) / eps


def is_well_prepared(profile: InitialProfile) -> bool:
    tol = preparedness_tolerance(profile.epsilon, profile.grid)
    return bool(np.all(preparedness_excess(profile) <= tol))


def density_ratio_sup(profile: InitialProfile, radii, samples) -> float:
    """Sup over samples and radii of ``mu_0(B_r(x)) / (omega_{d-1} r^{d-1})``."""
    from .diagnostics import density_ratio_sup_field

    return density_ratio_sup_field(profile.grid, profile.phi0, profile.epsilon, radii, samples)
