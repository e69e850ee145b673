"""Uniform lattice grids restricted to a domain, and grid measures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch
from .geometry import Domain, signed_distance


class Grid:
    """Lattice nodes of spacing h lying in the closed domain.

    Node ``i`` has integer lattice coordinates ``lattice[i]`` and position
    ``center + (lattice[i] - (shape - 1)/2) * h``, which keeps symmetric
    domains exactly symmetric in floating point.  Nodes are numbered in
    row-major lattice order.
    """

    def __init__(self, domain: Domain, nodes_per_axis: int):
        if nodes_per_axis < 3:
            raise ValueError("need at least 3 nodes per axis")
        self.domain = domain
        ext = domain.upper - domain.lower
        h = float(ext[0]) / (nodes_per_axis - 1)
        counts = np.rint(ext / h).astype(int) + 1
        if np.any(np.abs((counts - 1) * h - ext) > 1e-9 * ext):
            raise ValueError("box edges are not commensurate with the spacing")
        self.h = h
        self.shape = tuple(int(c) for c in counts)
        axes = [np.arange(c) for c in self.shape]
        lat = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
        pts = domain.center + (lat - (counts - 1) / 2.0) * h
        b = signed_distance(domain, pts)
        keep = b <= 1e-12
        self.lattice = lat[keep]
        self.points = pts[keep]
        self.size = int(keep.sum())
        index = np.full(int(np.prod(counts)), -1, dtype=np.int64)
        index[np.flatnonzero(keep)] = np.arange(self.size)
        self.index = index.reshape(self.shape)
        b = b[keep]
        self.signed_distance = b
        self.boundary = np.abs(b) <= h * (1 + 1e-9)
        self.corner = self._corner_mask()
        self.reference = self.nearest(domain.center)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def x(self) -> np.ndarray:
        """Coordinates as a flat vector in 1D, (n, d) otherwise."""
        return self.points[:, 0] if self.dim == 1 else self.points

    def _corner_mask(self) -> np.ndarray:
        if self.domain.kind != "box" or self.dim < 2:
            return np.zeros(self.size, dtype=bool)
        lo = self.points - self.domain.lower
        hi = self.domain.upper - self.points
        near = (np.minimum(lo, hi) <= self.h * (1 + 1e-9)).sum(axis=1)
        return near >= 2

    def node_at(self, lattice_coords) -> np.ndarray:
        """Node ids for integer lattice coordinates (-1 outside)."""
        lc = np.asarray(lattice_coords, dtype=np.int64)
        ok = np.all((lc >= 0) & (lc < np.array(self.shape)), axis=-1)
        safe = np.where(ok[..., None], lc, 0)
        ids = self.index[tuple(np.moveaxis(safe, -1, 0))]
        return np.where(ok, ids, -1)

    def nearest(self, point) -> int:
        """Index of the node nearest to ``point`` (smallest index on ties)."""
        p = np.asarray(point, dtype=float).reshape(self.dim)
        d2 = np.sum((self.points - p) ** 2, axis=1)
        return int(np.flatnonzero(d2 <= d2.min() * (1 + 1e-12) + 1e-300)[0])

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights on boxes, plain cell volume on the disc."""
        w = np.full(self.size, self.h**self.dim)
        if self.domain.kind != "disc":
            for a in range(self.dim):
                edge = (self.lattice[:, a] == 0) | (self.lattice[:, a] == self.shape[a] - 1)
                w[edge] *= 0.5
        return w

    def same_as(self, other: "Grid") -> bool:
        if self is other:
            return True
        return (
            self.shape == other.shape
            and self.size == other.size
            and self.domain.kind == other.domain.kind
            and np.array_equal(self.points, other.points)
        )

    def __repr__(self):
        return f"Grid({self.domain.kind}, shape={self.shape}, h={self.h:.6g}, nodes={self.size})"


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Probability measure carried by grid nodes."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.grid.size,):
            raise ValueError(f"weights must have shape ({self.grid.size},)")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum():.15g}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    @classmethod
    def dirac(cls, grid: Grid, point) -> "GridMeasure":
        w = np.zeros(grid.size)
        w[grid.nearest(point)] = 1.0
        return cls(grid, w)

    @classmethod
    def uniform(cls, grid: Grid, nodes=None) -> "GridMeasure":
        w = np.zeros(grid.size)
        idx = np.arange(grid.size) if nodes is None else np.asarray(nodes, dtype=int)
        w[idx] = 1.0 / idx.size
        return cls(grid, w)

    @classmethod
    def from_weights(cls, grid: Grid, weights) -> "GridMeasure":
        """Clip tiny negatives and renormalise before validating."""
        w = np.maximum(np.asarray(weights, dtype=float), 0.0)
        return cls(grid, w / w.sum())


def check_same_grid(a: Grid, b: Grid):
    if not a.same_as(b):
        raise GridMismatch(f"{a!r} differs from {b!r}")
