"""Tile-parallel alpha blending with early stopping, plus a brute-force oracle."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .binning import PairList, build_pairs, dpes_cull_pairs, sort_pairs
from .metrics import WorkloadCounters
from .preprocess import ProjectedGaussian, ProjectedSet, RenderConfig, TileGrid, project_set
from .scene import CameraPose, GaussianSet

DEPTH_ALPHA_MIN = 1e-6


def worker_threads() -> int:
    """Thread count from ``LSG_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("LSG_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class FrameBuffers:
    color: np.ndarray        # (H, W, 3)
    depth: np.ndarray        # (H, W); NaN where no depth is defined
    depth_max: np.ndarray    # (H, W) truncated depth, 0 where nothing blended
    valid: np.ndarray        # (H, W) bool
    interp_mask: np.ndarray  # (H, W) bool
    background: np.ndarray

    @property
    def height(self) -> int:
        return self.color.shape[0]

    @property
    def width(self) -> int:
        return self.color.shape[1]

    @classmethod
    def blank(cls, height: int, width: int, background=(0.0, 0.0, 0.0)) -> "FrameBuffers":
        bg = np.asarray(background, dtype=np.float64)
        return cls(np.broadcast_to(bg, (height, width, 3)).copy(),
                   np.full((height, width), np.nan), np.zeros((height, width)),
                   np.zeros((height, width), dtype=bool), np.zeros((height, width), dtype=bool), bg)

    def copy(self) -> "FrameBuffers":
        return FrameBuffers(self.color.copy(), self.depth.copy(), self.depth_max.copy(),
                            self.valid.copy(), self.interp_mask.copy(), self.background.copy())


def pixel_density(pg: ProjectedGaussian, p) -> float:
    d = np.asarray(p, dtype=np.float64) - pg.mu
    q = float(d @ np.linalg.solve(pg.cov, d))
    return min(pg.opacity * math.exp(-0.5 * q), _kernels.ALPHA_CLAMP)


def _chunks(items: np.ndarray, n: int):
    n = max(1, min(n, len(items)))
    return [c for c in np.array_split(items, n) if len(c)]


def _finish(frame, rows, accd, acca, cfg):
    sub_a = acca[rows]
    sub_d = accd[rows]
    has = sub_a > DEPTH_ALPHA_MIN
    with np.errstate(invalid="ignore", divide="ignore"):
        d = sub_d / sub_a if cfg.depth_mode == "normalized" else sub_d
    frame.depth[rows] = np.where(has, d, np.nan)


def rasterize(ps: ProjectedSet, pairs: PairList, grid: TileGrid, cfg: RenderConfig,
              frame: FrameBuffers, tiles=None, pix_mask=None, threads: int | None = None,
              counters: WorkloadCounters | None = None) -> FrameBuffers:
    """Blend ``tiles`` (all by default) into ``frame`` in place.

    Only pixels with ``pix_mask`` set are written; they become valid and
    lose any interpolation flag.
    """
    h, w = grid.height, grid.width
    tiles = np.arange(grid.num_tiles, dtype=np.int64) if tiles is None else np.asarray(tiles, dtype=np.int64)
    if pix_mask is None:
        pix_mask = np.ones((h, w), dtype=np.bool_)
    else:
        pix_mask = np.ascontiguousarray(pix_mask, dtype=np.bool_)
    region = np.zeros((h, w), dtype=bool)
    ty, tx = np.divmod(tiles, grid.tiles_x)
    for x, y in zip(tx, ty):
        s = grid.tile_size
        region[y * s:(y + 1) * s, x * s:(x + 1) * s] = True
    region &= pix_mask

    color = frame.color
    accd = np.zeros((h, w))
    acca = np.zeros((h, w))
    dmax = frame.depth_max
    blends = np.zeros(grid.num_tiles, dtype=np.int64)
    stops = np.zeros(grid.num_tiles, dtype=np.int64)
    conic = np.ascontiguousarray(ps.conic) if len(ps) else np.zeros((0, 3))
    qcut = _kernels.qcut_for(ps.opacity, cfg.tau)
    bg = np.asarray(cfg.background, dtype=np.float64)
    args = (pairs.offsets, pairs.rows, ps.mu, conic, ps.opacity, qcut, ps.color, ps.depth,
            grid.tiles_x, grid.tile_size, bg, cfg.tau, cfg.t_stop, cfg.early_stop, pix_mask,
            color, accd, acca, dmax, blends, stops)
    n = threads or worker_threads()
    chunks = _chunks(tiles, n)
    if len(chunks) <= 1:
        for c in chunks:
            _kernels.raster_tiles(c, *args)
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(lambda c: _kernels.raster_tiles(c, *args), chunks))

    _finish(frame, region, accd, acca, cfg)
    frame.valid[region] = True
    frame.interp_mask[region] = False
    if counters is not None:
        counters.blended_pairs += int(blends.sum())
        counters.early_stops += int(stops.sum())
        counters.pixels_rendered += int(region.sum())
    return frame


def prepare_pairs(gset: GaussianSet, pose: CameraPose, cfg: RenderConfig, active_tiles=None,
                  bounds=None, counters: WorkloadCounters | None = None):
    """Project, bin, optionally depth-cull and sort. Returns ``(ps, grid, pairs)``."""
    ps = project_set(gset, pose, cfg)
    grid = TileGrid.for_pose(pose)
    pairs = build_pairs(ps, grid, cfg, active_tiles)
    raw = pairs.total_pairs
    if bounds is not None:
        pairs = dpes_cull_pairs(pairs, bounds)
    pairs = sort_pairs(pairs)
    if counters is not None:
        counters.gaussians_in += ps.stats["gaussians_in"]
        counters.culled += ps.stats["culled"]
        counters.degenerate += ps.stats["degenerate"]
        for k, v in pairs.counts_by_stage.items():
            counters.pairs_by_stage[k] = counters.pairs_by_stage.get(k, 0) + v
        counters.pairs += raw
        counters.pairs_after_dpes += pairs.total_pairs
    return ps, grid, pairs


def render_tile(ps: ProjectedSet, pairs: PairList, tile_id: int, grid: TileGrid, cfg: RenderConfig):
    """Render a single tile; returns ``(color, depth, depth_max)`` as 16x16 arrays."""
    frame = FrameBuffers.blank(grid.height, grid.width, cfg.background)
    rasterize(ps, pairs, grid, cfg, frame, tiles=[tile_id], threads=1)
    s = grid.tile_size
    ty, tx = divmod(tile_id, grid.tiles_x)
    sl = (slice(ty * s, (ty + 1) * s), slice(tx * s, (tx + 1) * s))
    return frame.color[sl].copy(), frame.depth[sl].copy(), frame.depth_max[sl].copy()


def render_frame_full(gset: GaussianSet, pose: CameraPose, cfg: RenderConfig | None = None,
                      threads: int | None = None, counters: WorkloadCounters | None = None,
                      tile_order=None) -> FrameBuffers:
    """Full pipeline: cull, project, bin, sort, blend every tile."""
    cfg = cfg or RenderConfig()
    ps, grid, pairs = prepare_pairs(gset, pose, cfg, counters=counters)
    frame = FrameBuffers.blank(pose.height, pose.width, cfg.background)
    rasterize(ps, pairs, grid, cfg, frame, tiles=tile_order, threads=threads, counters=counters)
    return frame


def brute_force_reference(gset: GaussianSet, pose: CameraPose, cfg: RenderConfig | None = None,
                          threads: int | None = None) -> FrameBuffers:
    """Oracle renderer: every surviving splat at every pixel, global depth order,
    no tiling, no intersection test, no early stopping."""
    cfg = replace(cfg or RenderConfig(), early_stop=False)
    ps = project_set(gset, pose, cfg)
    order = np.lexsort((ps.ids, ps.depth)).astype(np.int64)
    frame = FrameBuffers.blank(pose.height, pose.width, cfg.background)
    h, w = pose.height, pose.width
    accd = np.zeros((h, w))
    acca = np.zeros((h, w))
    conic = np.ascontiguousarray(ps.conic) if len(ps) else np.zeros((0, 3))
    qcut = _kernels.qcut_for(ps.opacity, cfg.tau)
    bg = np.asarray(cfg.background, dtype=np.float64)
    bounds = np.linspace(0, h, max(1, min(threads or worker_threads(), h)) + 1).astype(int)

    def run(i):
        _kernels.raster_rows(bounds[i], bounds[i + 1], w, order, ps.mu, conic, ps.opacity, qcut,
                             ps.color, ps.depth, bg, cfg.tau, cfg.t_stop, False,
                             frame.color, accd, acca, frame.depth_max)

    with ThreadPoolExecutor(max_workers=len(bounds) - 1) as pool:
        list(pool.map(run, range(len(bounds) - 1)))
    _finish(frame, np.ones((h, w), dtype=bool), accd, acca, cfg)
    frame.valid[:] = True
    return frame
