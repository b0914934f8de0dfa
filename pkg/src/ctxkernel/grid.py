"""Regular cell grids and the handcrafted sector adjacency that seeds the context."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridSpec",
    "AdjacencySet",
    "SECTOR_NAMES",
    "sector_centers",
    "sector_of",
    "build_adjacency",
]

# Sector order for C=4; also the block order of every map layer.
SECTOR_NAMES = ("left", "right", "up", "down")

_TIE_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the cell grid shared by every image.

    Parameters
    ----------
    rows, cols : int
        Number of cell rows and columns.
    radius : int
        Neighborhood radius in cell units (Euclidean disk).
    sectors : int
        Number of angular neighbor types.
    """

    rows: int
    cols: int
    radius: int = 1
    sectors: int = 4

    def __post_init__(self):
        for name in ("rows", "cols", "radius", "sectors"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"GridSpec.{name} must be a positive integer, got {value!r}")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def cell_index(self, row: int, col: int) -> int:
        return row * self.cols + col

    def cell_coords(self, index: int) -> tuple[int, int]:
        return divmod(index, self.cols)

    def sector_names(self) -> tuple[str, ...]:
        if self.sectors == 4:
            return SECTOR_NAMES
        return tuple(f"s{c}" for c in range(self.sectors))


@dataclass(frozen=True)
class AdjacencySet:
    """Per-sector ``n x n`` adjacency matrices and their fixed support.

    ``matrices[c, x, x']`` is the weight of neighbor ``x'`` of cell ``x`` in
    sector ``c``; ``mask`` has the same shape and never changes.
    """

    spec: GridSpec
    matrices: np.ndarray
    mask: np.ndarray

    def degrees(self) -> np.ndarray:
        return self.mask.sum(axis=(0, 2))


def sector_centers(sectors: int) -> np.ndarray:
    """Center angle (degrees, counter-clockwise from the +col axis) of each sector."""
    if sectors == 4:
        return np.array([180.0, 0.0, 90.0, 270.0])
    return np.arange(sectors) * (360.0 / sectors)


def _angular_distance(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def sector_of(delta_row: int, delta_col: int, sectors: int = 4) -> int:
    """Return the sector index of the displacement ``(delta_row, delta_col)``.

    Rows grow downward, so ``(-1, 0)`` points up. The displacement goes to
    the sector whose center angle is nearest; an exact boundary goes to the
    lower-indexed of the two sectors.
    """
    if delta_row == 0 and delta_col == 0:
        raise ValueError("zero displacement has no sector (self-loop query)")
    if sectors < 1:
        raise ValueError(f"sectors must be >= 1, got {sectors}")
    angle = math.degrees(math.atan2(-delta_row, delta_col)) % 360.0
    dists = [_angular_distance(angle, c) for c in sector_centers(sectors)]
    best = min(dists)
    for c, d in enumerate(dists):
        if d <= best + _TIE_TOL:
            return c
    raise AssertionError("unreachable")


def build_adjacency(spec: GridSpec) -> AdjacencySet:
    """Build the row-stochastic handcrafted adjacency for ``spec``.

    Every neighbor within the disk of radius ``spec.radius`` gets weight
    ``1 / deg(x)``, where ``deg(x)`` counts neighbors over all sectors, so
    the sector matrices sum to a row-stochastic matrix and border cells
    carry larger weights than interior ones.
    """
    n, C, r = spec.n_cells, spec.sectors, spec.radius
    mask = np.zeros((C, n, n), dtype=bool)
    offsets = [
        (dr, dc, sector_of(dr, dc, C))
        for dr in range(-r, r + 1)
        for dc in range(-r, r + 1)
        if (dr, dc) != (0, 0) and dr * dr + dc * dc <= r * r
    ]
    for x in range(n):
        row, col = spec.cell_coords(x)
        for dr, dc, c in offsets:
            rr, cc = row + dr, col + dc
            if 0 <= rr < spec.rows and 0 <= cc < spec.cols:
                mask[c, x, spec.cell_index(rr, cc)] = True

    deg = mask.sum(axis=(0, 2)).astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    matrices = mask * inv[None, :, None]
    mask.setflags(write=False)
    matrices.setflags(write=False)
    return AdjacencySet(spec=spec, matrices=matrices, mask=mask)
