"""Gaussian/tile pair lists, per-tile depth ordering and depth-bound culling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .preprocess import ProjectedSet, RenderConfig, TileGrid, intersect_pairs

UNBOUNDED = np.inf


@dataclass
class PairList:
    """Per-tile pair lists in CSR form.

    ``rows`` index into the :class:`ProjectedSet` the list was built from,
    ``ids`` are the matching persistent Gaussian ids and ``depths`` the sort keys.
    """

    num_tiles: int
    offsets: np.ndarray
    rows: np.ndarray
    ids: np.ndarray
    depths: np.ndarray
    counts_by_stage: dict = field(default_factory=dict)

    @property
    def total_pairs(self) -> int:
        return int(self.offsets[-1])

    def tile_counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def tile(self, t: int) -> list[tuple[int, float]]:
        s, e = self.offsets[t], self.offsets[t + 1]
        return [(int(i), float(d)) for i, d in zip(self.ids[s:e], self.depths[s:e])]

    @classmethod
    def from_arrays(cls, num_tiles, tile, rows, ids, depths, counts_by_stage=None):
        order = np.argsort(tile, kind="stable")
        counts = np.bincount(tile, minlength=num_tiles) if tile.size else np.zeros(num_tiles, dtype=np.int64)
        offsets = np.zeros(num_tiles + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return cls(num_tiles, offsets, rows[order], ids[order], depths[order], dict(counts_by_stage or {}))

    def _tile_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_tiles, dtype=np.int64), self.tile_counts())

    def _take(self, keep_or_order) -> "PairList":
        tile = self._tile_index()[keep_or_order]
        return PairList.from_arrays(self.num_tiles, tile, self.rows[keep_or_order],
                                    self.ids[keep_or_order], self.depths[keep_or_order],
                                    self.counts_by_stage)


def build_pairs(ps: ProjectedSet, grid: TileGrid, cfg: RenderConfig, active_tiles=None) -> PairList:
    """Emit pairs for the configured intersection test.

    ``active_tiles`` (boolean per tile) restricts emission to tiles that will be
    rendered; within a tile, pairs keep the projected-set order.
    """
    splat, tile, counts = intersect_pairs(ps, grid, cfg)
    if active_tiles is not None:
        keep = np.asarray(active_tiles, dtype=bool)[tile]
        splat, tile = splat[keep], tile[keep]
        counts = {k + "_all_tiles": v for k, v in counts.items()}
        counts["emitted"] = int(splat.size)
    return PairList.from_arrays(grid.num_tiles, tile, splat, ps.ids[splat], ps.depth[splat], counts)


def depth_sort_tile(pairs):
    """Sort one tile's ``(gaussian id, depth)`` pairs by depth, ties by id."""
    for _, d in pairs:
        assert d == d, "NaN depth reached sorting"
    return sorted(pairs, key=lambda p: (p[1], p[0]))


def sort_pairs(pl: PairList) -> PairList:
    """Vectorised :func:`depth_sort_tile` over every tile at once."""
    assert not np.isnan(pl.depths).any(), "NaN depth reached sorting"
    order = np.lexsort((pl.ids, pl.depths, pl._tile_index()))
    return pl._take(order)


def dpes_cull(pairs, bound: float):
    """Drop pairs deeper than the tile's early-stop bound (``inf`` = unbounded)."""
    if bound == UNBOUNDED:
        return list(pairs)
    return [p for p in pairs if p[1] <= bound]


def dpes_cull_pairs(pl: PairList, bounds: np.ndarray) -> PairList:
    bounds = np.asarray(bounds, dtype=np.float64)
    keep = pl.depths <= bounds[pl._tile_index()]
    out = pl._take(keep)
    out.counts_by_stage = dict(pl.counts_by_stage)
    return out
