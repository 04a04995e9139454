"""Zero level set extraction on the periodic grid.

In 2-D, marching squares over the cell-centre lattice, with wrap-around
squares, chained into loops.  Loop coordinates are unwrapped (consecutive
points are minimal-image neighbours), so a closed curve comes back to its
start and a curve winding around the torus does not.  In 3-D only the edge
crossings are returned, as a point cloud.
"""

from __future__ import annotations

import numpy as np

from .grid_fields import TorusGrid, wrap


def _edge_crossings(phi: np.ndarray, grid: TorusGrid, axis: int):
    """Crossing mask and interpolated positions on edges (x, x + h e_axis)."""
    nxt = np.roll(phi, -1, axis=axis)
    pos = phi > 0
    mask = pos != (nxt > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(mask, phi / (phi - nxt), 0.0)
    coords = grid.mesh.copy()
    coords[axis] = coords[axis] + frac * grid.h
    return mask, np.mod(coords, 1.0)


def extract_interface(phi: np.ndarray, grid: TorusGrid):
    """Zero level set of ``phi``.

    Returns a list of ``(m, 2)`` loops for d = 2 and an ``(m, 3)`` point array
    for d = 3.  Both are empty when ``phi`` has no sign change.
    """
    if grid.d == 3:
        pts = []
        for ax in range(3):
            mask, coords = _edge_crossings(phi, grid, ax)
            pts.append(coords[:, mask].T)
        return np.concatenate(pts) if pts else np.zeros((0, 3))
    return _marching_squares(phi, grid)


def _marching_squares(phi: np.ndarray, grid: TorusGrid) -> list[np.ndarray]:
    n = grid.n
    mask0, pos0 = _edge_crossings(phi, grid, 0)
    mask1, pos1 = _edge_crossings(phi, grid, 1)
    if not (mask0.any() or mask1.any()):
        return []

    # node ids: axis-0 edge at (i, j) -> i*n + j ; axis-1 edge -> n*n + i*n + j
    def node0(i, j):
        return (i % n) * n + (j % n)

    def node1(i, j):
        return n * n + (i % n) * n + (j % n)

    points = np.concatenate([pos0.reshape(2, -1).T, pos1.reshape(2, -1).T])
    adjacency: dict[int, list[int]] = {}

    def link(a, b):
        adjacency.setdefault(a, []).append(b)
        adjacency.setdefault(b, []).append(a)

    ip = np.roll(np.arange(n), -1)
    inside = phi > 0
    # square (i, j) has corners v0=(i,j) v1=(i+1,j) v2=(i+1,j+1) v3=(i,j+1)
    e0 = mask0
    e1 = mask1[ip, :]
    e2 = mask0[:, ip]
    e3 = mask1
    count = e0.astype(int) + e1 + e2 + e3
    for i, j in zip(*np.nonzero(count)):
        edges = [node0(i, j), node1(i + 1, j), node0(i, j + 1), node1(i, j)]
        hit = [bool(e0[i, j]), bool(e1[i, j]), bool(e2[i, j]), bool(e3[i, j])]
        if count[i, j] == 2:
            a, b = (e for e, h in zip(edges, hit) if h)
            link(a, b)
            continue
        centre = 0.25 * (phi[i, j] + phi[(i + 1) % n, j] + phi[(i + 1) % n, (j + 1) % n] + phi[i, (j + 1) % n])
        if (centre > 0) == inside[i, j]:
            # v0 and v2 connected through the centre: cut off v1 and v3
            link(edges[0], edges[1])
            link(edges[2], edges[3])
        else:
            link(edges[3], edges[0])
            link(edges[1], edges[2])

    loops = []
    seen: set[int] = set()
    for start in sorted(adjacency):
        if start in seen:
            continue
        chain = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nbrs = adjacency[cur]
            nxt = nbrs[0] if nbrs[0] != prev else (nbrs[1] if len(nbrs) > 1 else nbrs[0])
            if nxt == start or nxt in seen:
                break
            chain.append(nxt)
            seen.add(nxt)
            prev, cur = cur, nxt
        raw = points[chain]
        steps = wrap(np.diff(raw, axis=0))
        loops.append(np.vstack([raw[:1], raw[0] + np.cumsum(steps, axis=0)]))
    return loops


def loop_is_closed(loop: np.ndarray, grid: TorusGrid) -> bool:
    """True if the unwrapped loop returns to its start (does not wind around the torus)."""
    gap = loop[0] - loop[-1]
    return bool(np.all(np.abs(gap) < 2.0 * grid.h))


def shoelace_area(loop: np.ndarray) -> float:
    x, y = loop[:, 0], loop[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def loop_length(loop: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.roll(loop, -1, axis=0) - loop, axis=1)))


def isoperimetric_ratio(loop: np.ndarray) -> float:
    """``L^2 / (4 pi A)``; equals 1 for a circle."""
    return loop_length(loop) ** 2 / (4.0 * np.pi * shoelace_area(loop))


def fit_circle(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Algebraic least-squares circle fit; returns (centre, radius)."""
    x, y = points[:, 0], points[:, 1]
    A = np.column_stack([2 * x, 2 * y, np.ones_like(x)])
    b = x * x + y * y
    (cx, cy, c), *_ = np.linalg.lstsq(A, b, rcond=None)
    return np.array([cx, cy]), float(np.sqrt(c + cx * cx + cy * cy))
