"""Forward warping of a rendered frame to a new viewpoint and per-tile
interpolate / re-render planning with early-stop depth bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import TileGrid
from .rasterizer import FrameBuffers
from .scene import TILE, CameraPose

INTERPOLATE = 0
RERENDER = 1
STATUS_NAMES = {INTERPOLATE: "INTERPOLATE", RERENDER: "RERENDER"}
WARP_MODES = ("tile_warp", "pixel_warp")


@dataclass(frozen=True)
class WarpConfig:
    n0_valid: int = 214  # ceil(256 * 5 / 6): at most 42 holes per tile
    window: int = 5
    mask_enabled: bool = True
    mode: str = "tile_warp"
    dpes: bool = True

    def __post_init__(self):
        if not 0 <= self.n0_valid <= TILE * TILE:
            raise ValueError("n0_valid must lie in [0, 256]")
        if self.window < 0:
            raise ValueError("window must be >= 0")
        if self.mode not in WARP_MODES:
            raise ValueError(f"unknown warp mode {self.mode!r}")


@dataclass
class TilePlan:
    grid: TileGrid
    status: np.ndarray
    valid_count: np.ndarray
    bound: np.ndarray  # inf where unbounded
    load: np.ndarray

    @property
    def rerender_tiles(self) -> np.ndarray:
        return np.flatnonzero(self.status == RERENDER)

    @property
    def interpolate_tiles(self) -> np.ndarray:
        return np.flatnonzero(self.status == INTERPOLATE)

    def to_dict(self) -> dict:
        tiles = []
        for t in range(self.grid.num_tiles):
            b = float(self.bound[t])
            tiles.append({
                "id": t, "tx": t % self.grid.tiles_x, "ty": t // self.grid.tiles_x,
                "status": STATUS_NAMES[int(self.status[t])],
                "valid": int(self.valid_count[t]),
                "bound": None if not np.isfinite(b) else b,
                "load": int(self.load[t]),
            })
        return {"tiles_x": self.grid.tiles_x, "tiles_y": self.grid.tiles_y, "tiles": tiles}


@dataclass
class PointSet:
    positions: np.ndarray        # world space, at the scene depth
    trunc_positions: np.ndarray  # world space, same ray at the truncated depth
    color: np.ndarray
    depth_max: np.ndarray        # truncated depth in the source camera
    interpolated: np.ndarray
    source: np.ndarray           # flat source pixel index

    def __len__(self) -> int:
        return len(self.source)


def backproject(frame: FrameBuffers, pose: CameraPose, mask_enabled: bool = True) -> PointSet:
    """Lift every usable pixel to a world-space point.

    Usable means valid with a defined depth, and (when masking) not an
    interpolated pixel.
    """
    use = frame.valid & np.isfinite(frame.depth)
    if mask_enabled:
        use &= ~frame.interp_mask
    ys, xs = np.nonzero(use)
    d = frame.depth[ys, xs]
    dm = frame.depth_max[ys, xs]
    rx = (xs + 0.5 - pose.cx) / pose.fx
    ry = (ys + 0.5 - pose.cy) / pose.fy
    rays = np.stack([rx, ry, np.ones_like(rx)], axis=1)
    cam = rays * d[:, None]
    cam_t = rays * dm[:, None]
    return PointSet(pose.camera_to_world(cam), pose.camera_to_world(cam_t),
                    frame.color[ys, xs].copy(), dm.copy(), frame.interp_mask[ys, xs].copy(),
                    (ys * frame.width + xs).astype(np.int64))


def reproject(points: PointSet, pose: CameraPose, background=(0.0, 0.0, 0.0)):
    """Splat points into the target view with nearest-pixel rounding and a z-buffer.

    Returns the sparse target frame and its truncated-depth map. Collisions keep
    the smallest depth; equal depths keep the lower source pixel index.
    """
    h, w = pose.height, pose.width
    out = FrameBuffers.blank(h, w, background)
    if len(points) == 0:
        return out, out.depth_max
    cam = pose.world_to_camera(points.positions)
    z = cam[:, 2]
    ok = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = pose.fx * cam[:, 0] / z + pose.cx
        v = pose.fy * cam[:, 1] / z + pose.cy
    ok &= np.isfinite(u) & np.isfinite(v)
    ix = np.floor(np.where(ok, u, -1)).astype(np.int64)
    iy = np.floor(np.where(ok, v, -1)).astype(np.int64)
    ok &= (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    sel = np.flatnonzero(ok)
    pix = iy[sel] * w + ix[sel]
    order = np.lexsort((points.source[sel], z[sel], pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = sel[order[first]]
    wp = pix_sorted[first]
    wy, wx = np.divmod(wp, w)
    zt = pose.world_to_camera(points.trunc_positions[win])[:, 2]
    out.color[wy, wx] = points.color[win]
    out.depth[wy, wx] = z[win]
    out.depth_max[wy, wx] = zt
    out.valid[wy, wx] = True
    return out, out.depth_max


def classify_tiles(frame: FrameBuffers, cfg: WarpConfig, grid: TileGrid | None = None) -> TilePlan:
    grid = grid or TileGrid(frame.width // TILE, frame.height // TILE)
    s = grid.tile_size
    v = frame.valid.reshape(grid.tiles_y, s, grid.tiles_x, s)
    counts = v.sum(axis=(1, 3)).ravel().astype(np.int64)
    status = np.where(counts >= cfg.n0_valid, INTERPOLATE, RERENDER).astype(np.int8)
    dm = np.where(frame.valid, frame.depth_max, -np.inf).reshape(grid.tiles_y, s, grid.tiles_x, s)
    tile_max = dm.max(axis=(1, 3)).ravel()
    bound = np.where((status == RERENDER) & (counts > 0), tile_max, np.inf)
    return TilePlan(grid, status, counts, bound, np.zeros(grid.num_tiles, dtype=np.int64))


def interpolate_tile(frame: FrameBuffers, tile_id: int, grid: TileGrid | None = None) -> int:
    """Fill the holes of one tile in place; returns the number of filled pixels.

    Each hole takes the inverse-distance weighted color of the valid pixels in
    the smallest square window (within the tile) that contains any, and the
    depths of the nearest of them.
    """
    grid = grid or TileGrid(frame.width // TILE, frame.height // TILE)
    s = grid.tile_size
    ty, tx = divmod(int(tile_id), grid.tiles_x)
    sl = (slice(ty * s, (ty + 1) * s), slice(tx * s, (tx + 1) * s))
    valid = frame.valid[sl]
    holes = np.argwhere(~valid)
    if len(holes) == 0:
        return 0
    src = np.argwhere(valid)
    if len(src) == 0:
        raise ValueError(f"tile {tile_id} has no valid pixel to interpolate from")
    dy = holes[:, None, 0] - src[None, :, 0]
    dx = holes[:, None, 1] - src[None, :, 1]
    cheb = np.maximum(np.abs(dy), np.abs(dx))
    ring = cheb.min(axis=1, keepdims=True)
    use = cheb == ring
    dist = np.hypot(dy, dx)
    wgt = np.where(use, 1.0 / np.where(use, dist, 1.0), 0.0)
    wgt /= wgt.sum(axis=1, keepdims=True)
    color = frame.color[sl]
    depth = frame.depth[sl]
    dmax = frame.depth_max[sl]
    src_color = color[src[:, 0], src[:, 1]]
    filled = wgt @ src_color
    # argmin picks the first in row-major scan order on ties.
    near = np.argmin(np.where(use, dist, np.inf), axis=1)
    hy, hx = holes[:, 0], holes[:, 1]
    color[hy, hx] = filled
    depth[hy, hx] = depth[src[near, 0], src[near, 1]]
    dmax[hy, hx] = dmax[src[near, 0], src[near, 1]]
    frame.valid[sl][hy, hx] = True
    frame.interp_mask[sl][hy, hx] = True
    return len(holes)


def warp_frame(ref: FrameBuffers, ref_pose: CameraPose, tgt_pose: CameraPose, cfg: WarpConfig):
    """Reuse ``ref`` at ``tgt_pose``.

    Returns the partially filled target and its :class:`TilePlan`. In
    ``tile_warp`` mode nearly complete tiles are interpolated and the rest are
    left for re-rendering; in ``pixel_warp`` mode every tile goes back through
    the pipeline and only the holes are filled by rendering.
    """
    mask = cfg.mask_enabled and cfg.mode == "tile_warp"
    points = backproject(ref, ref_pose, mask)
    target, _ = reproject(points, tgt_pose, ref.background)
    grid = TileGrid.for_pose(tgt_pose)
    plan = classify_tiles(target, cfg, grid)
    if cfg.mode == "pixel_warp":
        plan.status[:] = RERENDER
        plan.bound[:] = np.inf
        return target, plan
    for t in plan.interpolate_tiles:
        interpolate_tile(target, int(t), grid)
    return target, plan
