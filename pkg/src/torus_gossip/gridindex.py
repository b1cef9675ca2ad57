"""Spatial hash over disc centers on the torus, for point-cover queries.

Cells form a regular grid that exactly tiles ``[0, side)^d`` (the per-axis
cell count is ``floor(side / cell_target)``, so the actual cell size is at
least the requested one).  A query for "which discs cover point q" scans the
3^d neighborhood of q's cell; that is exhaustive as long as every disc radius
is at most the cell size, which the owner guarantees by rebuilding with
``cell_target = 2 * max_radius`` whenever the maximum radius outgrows the
cell.  With fewer than 3 cells per axis the structure degenerates to a single
bucket (full scan), which is always correct.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable, Sequence

__all__ = ["GridIndex"]


class GridIndex:
    """Hash grid mapping cell -> list of record indices (insertion order)."""

    def __init__(self, side: float, d: int, cell_target: float):
        self.side = side
        self.d = d
        n = int(side / cell_target) if cell_target > 0.0 else 0
        if n < 3:
            n = 1
        self.n_cells = n
        self.cell = side / n
        self._buckets: dict[tuple[int, ...], list[int]] = {}
        # Neighborhood offsets; for n == 1 the only cell is its own neighborhood.
        if n >= 3:
            self._offsets = list(itertools.product((-1, 0, 1), repeat=d))
        else:
            self._offsets = [(0,) * d]

    def _key(self, point: Sequence[float]) -> tuple[int, ...]:
        n, cell = self.n_cells, self.cell
        # A coordinate exactly at `side` (possible only through float edge
        # cases) must wrap to cell 0, hence the modulo after the floor.
        return tuple(int(c / cell) % n for c in point)

    def insert(self, idx: int, point: Sequence[float]) -> None:
        key = self._key(point)
        bucket = self._buckets.get(key)
        if bucket is None:
            self._buckets[key] = [idx]
        else:
            bucket.append(idx)

    def candidates(self, point: Sequence[float]) -> Iterable[int]:
        """Indices of all discs whose center lies within one cell of ``point``.

        Exhaustive for cover queries provided no disc radius exceeds the cell
        size.  Buckets are yielded in arbitrary cell order; callers that need
        the minimum index must scan all candidates.
        """
        base = self._key(point)
        n = self.n_cells
        buckets = self._buckets
        if n >= 3:
            for off in self._offsets:
                key = tuple((b + o) % n for b, o in zip(base, off))
                bucket = buckets.get(key)
                if bucket is not None:
                    yield from bucket
        else:
            bucket = buckets.get(base)
            if bucket is not None:
                yield from bucket

    def covers_radius(self, max_radius: float) -> bool:
        """True while the 3^d scan is exhaustive for discs up to ``max_radius``."""
        return self.n_cells == 1 or max_radius <= self.cell * (1.0 + 1e-12)

    @classmethod
    def build(
        cls,
        side: float,
        d: int,
        cell_target: float,
        points: Sequence[Sequence[float]],
        indices: Sequence[int],
    ) -> "GridIndex":
        grid = cls(side, d, cell_target)
        for idx, p in zip(indices, points):
            grid.insert(idx, p)
        return grid

    def __len__(self) -> int:
        return sum(len(b) for b in self._buckets.values())
