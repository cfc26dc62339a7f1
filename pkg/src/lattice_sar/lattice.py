"""Regular-lattice geometry: row-major indexing, neighbor templates, interior masks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "Lattice",
    "NeighborhoodTemplate",
    "build_lattice",
    "neighbor_template",
    "interior_sites",
    "window_indices",
    "window_matrix",
]


@dataclass(frozen=True)
class Lattice:
    nrows: int
    ncols: int

    @property
    def n(self) -> int:
        return self.nrows * self.ncols

    def coords(self, site: int) -> tuple[int, int]:
        if not 0 <= site < self.n:
            raise IndexError(f"site {site} outside lattice of {self.n} sites")
        return divmod(int(site), self.ncols)

    def index(self, row: int, col: int) -> int:
        if not (0 <= row < self.nrows and 0 <= col < self.ncols):
            raise IndexError(f"({row}, {col}) outside {self.nrows}x{self.ncols} lattice")
        return row * self.ncols + col


@dataclass(frozen=True)
class NeighborhoodTemplate:
    """Ordered relative offsets ``(drow, dcol)`` of the ``m`` potential neighbors."""

    offsets: tuple[tuple[int, int], ...]

    @property
    def m(self) -> int:
        return len(self.offsets)

    @property
    def ring(self) -> int:
        return max(max(abs(dr), abs(dc)) for dr, dc in self.offsets)

    @property
    def side(self) -> int:
        return 2 * self.ring + 1

    def position(self, offset: tuple[int, int]) -> int:
        """Template slot of a relative offset; ``ValueError`` if absent."""
        return self.offsets.index(tuple(offset))


def build_lattice(nrows: int, ncols: int) -> Lattice:
    if int(nrows) != nrows or int(ncols) != ncols or nrows < 1 or ncols < 1:
        raise ValueError(f"lattice dimensions must be positive integers, got {nrows}x{ncols}")
    return Lattice(int(nrows), int(ncols))


def _offset_key(off: tuple[int, int]) -> tuple[int, int, int]:
    dr, dc = off
    # squared distance orders identically to Euclidean distance and stays exact
    return (dr * dr + dc * dc, dr, dc)


@lru_cache(maxsize=None)
def neighbor_template(m: int) -> NeighborhoodTemplate:
    """Full square window of side ``sqrt(m + 1)`` minus the center.

    Offsets are ordered by distance, then row offset, then column offset.
    Supported sizes are 8, 24, 48, 80, ...
    """
    side = math.isqrt(m + 1) if m >= 0 else 0
    if m < 8 or side * side != m + 1 or side % 2 == 0:
        raise ValueError(
            f"unsupported template size m={m}; m + 1 must be an odd perfect square "
            "(supported: 8, 24, 48, 80, ...)"
        )
    h = side // 2
    offsets = [(dr, dc) for dr in range(-h, h + 1) for dc in range(-h, h + 1) if (dr, dc) != (0, 0)]
    offsets.sort(key=_offset_key)
    return NeighborhoodTemplate(tuple(offsets))


def interior_sites(lattice: Lattice, ring: int) -> np.ndarray:
    """Sites at least ``ring`` cells away from every border, in row-major order."""
    if ring < 0 or 2 * ring >= min(lattice.nrows, lattice.ncols):
        raise ValueError(
            f"ring {ring} too large for a {lattice.nrows}x{lattice.ncols} lattice"
        )
    rows = np.arange(ring, lattice.nrows - ring)
    cols = np.arange(ring, lattice.ncols - ring)
    return (rows[:, None] * lattice.ncols + cols[None, :]).ravel()


def window_indices(lattice: Lattice, site: int, template: NeighborhoodTemplate) -> list[int]:
    row, col = lattice.coords(site)
    out = []
    for dr, dc in template.offsets:
        r, c = row + dr, col + dc
        if not (0 <= r < lattice.nrows and 0 <= c < lattice.ncols):
            raise IndexError(
                f"window of site {site} at ({row}, {col}) crosses the lattice border"
            )
        out.append(r * lattice.ncols + c)
    return out


def window_matrix(lattice: Lattice, sites, template: NeighborhoodTemplate) -> np.ndarray:
    """Vectorized :func:`window_indices`: row ``i`` holds the neighbors of ``sites[i]``."""
    sites = np.asarray(sites, dtype=np.int64).reshape(-1)
    if sites.size and (sites.min() < 0 or sites.max() >= lattice.n):
        raise IndexError("site index outside lattice")
    rows, cols = np.divmod(sites, lattice.ncols)
    offs = np.asarray(template.offsets, dtype=np.int64)
    rr = rows[:, None] + offs[None, :, 0]
    cc = cols[:, None] + offs[None, :, 1]
    bad = (rr < 0) | (rr >= lattice.nrows) | (cc < 0) | (cc >= lattice.ncols)
    if bad.any():
        first = int(sites[np.nonzero(bad.any(axis=1))[0][0]])
        raise IndexError(f"window of site {first} crosses the lattice border")
    return rr * lattice.ncols + cc
