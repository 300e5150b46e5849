"""Per-view preprocessing: culling, EWA projection, eigen-analysis and the
Gaussian/tile intersection tests (3-sigma AABB, tight box, two-stage, exact)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .scene import TILE, CameraPose, GaussianSet, sh_to_color

INTERSECTION_MODES = ("aabb3sigma", "tight", "two_stage", "exact")
STAGE2_FORMS = ("conservative", "literal")


class DegenerateCovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    tau: float = 1.0 / 255.0
    t_stop: float = 1e-4
    intersection_mode: str = "two_stage"
    stage2_form: str = "conservative"
    cov_dilation: float = 0.3
    early_stop: bool = True
    depth_mode: str = "normalized"  # or "weighted_sum" (no division by alpha)
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0 < self.tau < 1 or not 0 < self.t_stop < 1:
            raise ValueError("tau and t_stop must lie in (0, 1)")
        if self.intersection_mode not in INTERSECTION_MODES:
            raise ValueError(f"unknown intersection mode {self.intersection_mode!r}")
        if self.stage2_form not in STAGE2_FORMS:
            raise ValueError(f"unknown stage-2 form {self.stage2_form!r}")
        if self.depth_mode not in ("normalized", "weighted_sum"):
            raise ValueError(f"unknown depth mode {self.depth_mode!r}")


@dataclass(frozen=True)
class TileGrid:
    tiles_x: int
    tiles_y: int
    tile_size: int = TILE

    @property
    def circumradius(self) -> float:
        return self.tile_size / 2 * math.sqrt(2.0)

    @property
    def num_tiles(self) -> int:
        return self.tiles_x * self.tiles_y

    @property
    def width(self) -> int:
        return self.tiles_x * self.tile_size

    @property
    def height(self) -> int:
        return self.tiles_y * self.tile_size

    @classmethod
    def for_pose(cls, pose: CameraPose) -> "TileGrid":
        return cls(-(-pose.width // TILE), -(-pose.height // TILE))

    def tile_center(self, tile_id):
        tile_id = np.asarray(tile_id)
        tx = tile_id % self.tiles_x
        ty = tile_id // self.tiles_x
        half = self.tile_size / 2
        return np.stack([tx * self.tile_size + half, ty * self.tile_size + half], axis=-1)


@dataclass
class ProjectedGaussian:
    id: int
    mu: np.ndarray
    cov: np.ndarray  # 2x2
    depth: float
    lambda1: float
    lambda2: float
    e_minor: np.ndarray
    r_major: float
    r_minor: float
    bbox: tuple
    color: np.ndarray
    opacity: float


@dataclass
class ProjectedSet:
    """Batched projected splats; row order is the projection (input id) order."""

    ids: np.ndarray
    mu: np.ndarray
    cov: np.ndarray  # (M, 3): xx, xy, yy
    depth: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    e_minor: np.ndarray
    r_major: np.ndarray
    r_minor: np.ndarray
    half_w: np.ndarray
    half_h: np.ndarray
    color: np.ndarray
    opacity: np.ndarray
    stats: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> ProjectedGaussian:
        a, b, c = self.cov[i]
        return ProjectedGaussian(
            int(self.ids[i]), self.mu[i].copy(), np.array([[a, b], [b, c]]),
            float(self.depth[i]), float(self.lambda1[i]), float(self.lambda2[i]),
            self.e_minor[i].copy(), float(self.r_major[i]), float(self.r_minor[i]),
            (float(self.half_w[i]), float(self.half_h[i])), self.color[i].copy(),
            float(self.opacity[i]))

    @property
    def conic(self) -> np.ndarray:
        a, b, c = self.cov[:, 0], self.cov[:, 1], self.cov[:, 2]
        det = a * c - b * b
        return np.stack([c / det, -b / det, a / det], axis=1)

    @classmethod
    def from_projected(cls, pgs: list[ProjectedGaussian]) -> "ProjectedSet":
        if not pgs:
            return _empty_projected()
        return cls(
            np.array([p.id for p in pgs], dtype=np.int64),
            np.array([p.mu for p in pgs], dtype=np.float64),
            np.array([[p.cov[0, 0], p.cov[0, 1], p.cov[1, 1]] for p in pgs]),
            np.array([p.depth for p in pgs]),
            np.array([p.lambda1 for p in pgs]),
            np.array([p.lambda2 for p in pgs]),
            np.array([p.e_minor for p in pgs]),
            np.array([p.r_major for p in pgs]),
            np.array([p.r_minor for p in pgs]),
            np.array([p.bbox[0] for p in pgs]),
            np.array([p.bbox[1] for p in pgs]),
            np.array([p.color for p in pgs]),
            np.array([p.opacity for p in pgs]),
        )

    def subset(self, mask) -> "ProjectedSet":
        return ProjectedSet(self.ids[mask], self.mu[mask], self.cov[mask], self.depth[mask],
                            self.lambda1[mask], self.lambda2[mask], self.e_minor[mask],
                            self.r_major[mask], self.r_minor[mask], self.half_w[mask],
                            self.half_h[mask], self.color[mask], self.opacity[mask],
                            dict(self.stats))


def _empty_projected() -> ProjectedSet:
    z = np.zeros(0)
    return ProjectedSet(np.zeros(0, dtype=np.int64), np.zeros((0, 2)), np.zeros((0, 3)), z, z, z,
                        np.zeros((0, 2)), z, z, z, z, np.zeros((0, 3)), z)


# --------------------------------------------------------------------------- geometry

def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """(w, x, y, z) unit quaternions to rotation matrices; works on (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def covariance_3d(scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    rot = quat_to_matrix(quats)
    m = rot * np.asarray(scales)[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def _cov2d(cam: np.ndarray, cov3: np.ndarray, pose: CameraPose, dilation: float) -> np.ndarray:
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    zero = np.zeros_like(z)
    jac = np.stack([
        np.stack([pose.fx / z, zero, -pose.fx * x / (z * z)], -1),
        np.stack([zero, pose.fy / z, -pose.fy * y / (z * z)], -1),
    ], -2)
    t = jac @ pose.rotation
    cov = t @ cov3 @ np.swapaxes(t, -1, -2)
    return np.stack([cov[:, 0, 0] + dilation, 0.5 * (cov[:, 0, 1] + cov[:, 1, 0]),
                     cov[:, 1, 1] + dilation], axis=1)


def _eigen_batch(cov: np.ndarray):
    a, b, c = cov[:, 0], cov[:, 1], cov[:, 2]
    mid = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    l1 = mid + rad
    l2 = mid - rad
    # Two algebraically equivalent eigenvector forms; take the better conditioned.
    v1 = np.stack([b, l2 - a], axis=1)
    v2 = np.stack([l2 - c, b], axis=1)
    n1 = np.linalg.norm(v1, axis=1)
    n2 = np.linalg.norm(v2, axis=1)
    v = np.where((n1 >= n2)[:, None], v1, v2)
    n = np.maximum(n1, n2)
    repeated = n <= 1e-12 * np.maximum(np.abs(mid), 1e-300)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = v / n[:, None]
    # Sign convention: positive y component, or positive x when y vanishes.
    flip = (e[:, 1] < 0) | ((e[:, 1] == 0) & (e[:, 0] < 0))
    e[flip] *= -1.0
    e[repeated] = (0.0, 1.0)
    return l1, l2, e


def eigen2x2(cov) -> tuple[float, float, np.ndarray]:
    """Closed-form eigen-decomposition of a symmetric 2x2 matrix.

    Returns ``(lambda1, lambda2, e_minor)`` with ``lambda1 >= lambda2`` and
    ``e_minor`` the unit eigenvector of ``lambda2``; repeated roots give (0, 1).
    """
    cov = np.asarray(cov, dtype=np.float64)
    packed = np.array([[cov[0, 0], 0.5 * (cov[0, 1] + cov[1, 0]), cov[1, 1]]])
    l1, l2, e = _eigen_batch(packed)
    if not l2[0] > 0:
        raise DegenerateCovarianceError(f"covariance is not positive definite (lambda2={l2[0]})")
    return float(l1[0]), float(l2[0]), e[0]


def effective_radii(opacity: float, lambda1: float, lambda2: float, tau: float = 1 / 255):
    """Distances at which the splat falls to ``tau``; ``None`` when it never reaches it."""
    if opacity <= tau:
        return None
    k = 2.0 * math.log(opacity / tau)
    return math.sqrt(k * lambda1), math.sqrt(k * lambda2)


def tight_bbox(pg: ProjectedGaussian, tau: float = 1 / 255):
    """Half extents of the axis-aligned box around the tau iso-contour."""
    if pg.opacity <= tau:
        return None
    k = 2.0 * math.log(pg.opacity / tau)
    return math.sqrt(k * pg.cov[0, 0]), math.sqrt(k * pg.cov[1, 1])


# --------------------------------------------------------------------------- culling & projection

def _camera_space(gset: GaussianSet, pose: CameraPose, cfg: RenderConfig):
    cam = pose.world_to_camera(gset.positions)
    front = cam[:, 2] > pose.near
    idx = np.flatnonzero(front)
    cov3 = covariance_3d(gset.scales[idx], gset.rotations[idx])
    cov2 = _cov2d(cam[idx], cov3, pose, cfg.cov_dilation)
    z = cam[idx, 2]
    mu = np.stack([pose.fx * cam[idx, 0] / z + pose.cx, pose.fy * cam[idx, 1] / z + pose.cy], axis=1)
    return cam, idx, cov2, mu


def _frustum_mask(mu, l1, pose):
    with np.errstate(invalid="ignore"):
        m = 3.0 * np.sqrt(np.maximum(l1, 0.0))
        return ((mu[:, 0] >= -m) & (mu[:, 0] <= pose.width + m)
                & (mu[:, 1] >= -m) & (mu[:, 1] <= pose.height + m) & np.isfinite(l1))


def frustum_cull(gset: GaussianSet, pose: CameraPose, cfg: RenderConfig | None = None):
    """Ids and camera-space positions of Gaussians that survive view culling."""
    cfg = cfg or RenderConfig()
    cam, idx, cov2, mu = _camera_space(gset, pose, cfg)
    l1, _, _ = _eigen_batch(cov2)
    keep = idx[_frustum_mask(mu, l1, pose)]
    return [(int(i), cam[i].copy()) for i in keep]


def project_set(gset: GaussianSet, pose: CameraPose, cfg: RenderConfig) -> ProjectedSet:
    """Cull and project a whole set; ``stats`` records what was dropped and why."""
    n = len(gset)
    if n == 0:
        out = _empty_projected()
        out.stats = {"gaussians_in": 0, "culled": 0, "degenerate": 0}
        return out
    cam, idx, cov2, mu = _camera_space(gset, pose, cfg)
    l1, l2, e = _eigen_batch(cov2)
    in_view = _frustum_mask(mu, l1, pose)
    degenerate = in_view & ~(l2 > 0)
    opac = gset.opacities[idx]
    keep = in_view & (l2 > 0) & (opac > cfg.tau) & np.isfinite(cam[idx, 2])
    sel = idx[keep]
    cov2, mu, l1, l2, e, opac = cov2[keep], mu[keep], l1[keep], l2[keep], e[keep], opac[keep]
    k = 2.0 * np.log(opac / cfg.tau)
    centre = pose.center
    dirs = gset.positions[sel] - centre
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    color = sh_to_color(gset.sh[sel], dirs, gset.sh_degree)
    out = ProjectedSet(
        sel.astype(np.int64), mu, cov2, cam[sel, 2].copy(), l1, l2, e,
        np.sqrt(k * l1), np.sqrt(k * l2), np.sqrt(k * cov2[:, 0]), np.sqrt(k * cov2[:, 2]),
        color, opac)
    out.stats = {"gaussians_in": n, "culled": int(n - len(sel)), "degenerate": int(degenerate.sum())}
    return out


def project_gaussian(g, pose: CameraPose, cfg: RenderConfig | None = None, gid: int = 0,
                     sh_degree: int = 0):
    """Project one :class:`Gaussian3D` lying in front of the camera."""
    cfg = cfg or RenderConfig()
    one = GaussianSet(g.position[None], g.scale[None], g.rotation[None],
                      [g.opacity], g.sh[None], sh_degree)
    cam = pose.world_to_camera(one.positions)
    if not cam[0, 2] > 0:
        raise ValueError("Gaussian must lie in front of the camera")
    cov2 = _cov2d(cam, covariance_3d(one.scales, one.rotations), pose, cfg.cov_dilation)
    l1, l2, e = _eigen_batch(cov2)
    if not l2[0] > 0:
        raise DegenerateCovarianceError("projected covariance is not positive definite")
    z = cam[0, 2]
    mu = np.array([pose.fx * cam[0, 0] / z + pose.cx, pose.fy * cam[0, 1] / z + pose.cy])
    d = g.position - pose.center
    color = sh_to_color(g.sh, d / max(np.linalg.norm(d), 1e-12), sh_degree)
    cov = np.array([[cov2[0, 0], cov2[0, 1]], [cov2[0, 1], cov2[0, 2]]])
    radii = effective_radii(g.opacity, l1[0], l2[0], cfg.tau) or (0.0, 0.0)
    pg = ProjectedGaussian(gid, mu, cov, float(z), float(l1[0]), float(l2[0]), e[0],
                           radii[0], radii[1], (0.0, 0.0), color, float(g.opacity))
    pg.bbox = tight_bbox(pg, cfg.tau) or (0.0, 0.0)
    return pg


# --------------------------------------------------------------------------- tile tests

def _rect_tiles(cx, cy, hx, hy, grid: TileGrid):
    """Expand per-splat rectangles into (splat index, tile id) pairs.

    A tile is hit when its open interior overlaps the closed rectangle; a
    zero-size rectangle still hits the tile containing its centre.
    """
    s = grid.tile_size
    x0 = np.floor((cx - hx) / s)
    x1 = np.maximum(np.ceil((cx + hx) / s) - 1, x0)
    y0 = np.floor((cy - hy) / s)
    y1 = np.maximum(np.ceil((cy + hy) / s) - 1, y0)
    x0 = np.clip(x0, 0, None)
    y0 = np.clip(y0, 0, None)
    x1 = np.clip(x1, None, grid.tiles_x - 1)
    y1 = np.clip(y1, None, grid.tiles_y - 1)
    nx = np.where(x1 >= x0, x1 - x0 + 1, 0).astype(np.int64)
    ny = np.where(y1 >= y0, y1 - y0 + 1, 0).astype(np.int64)
    counts = nx * ny
    splat = np.repeat(np.arange(len(cx), dtype=np.int64), counts)
    if splat.size == 0:
        return splat, np.zeros(0, dtype=np.int64)
    start = np.cumsum(counts) - counts
    local = np.arange(splat.size, dtype=np.int64) - start[splat]
    w = nx[splat]
    tx = x0[splat].astype(np.int64) + local % w
    ty = y0[splat].astype(np.int64) + local // w
    return splat, ty * grid.tiles_x + tx


def stage2_keep(mu, e_minor, r_minor, centers, circumradius, form: str = "conservative"):
    """Minor-axis distance predicate; True where the tile survives."""
    d = np.asarray(centers, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    p = np.abs(np.sum(d * np.asarray(e_minor, dtype=np.float64), axis=-1))
    if form == "conservative":
        return ~(p - circumradius > r_minor)
    if form == "literal":
        return ~(p + circumradius > r_minor)
    raise ValueError(f"unknown stage-2 form {form!r}")


def intersect_pairs(ps: ProjectedSet, grid: TileGrid, cfg: RenderConfig, mode: str | None = None):
    """All (splat row, tile id) pairs for a projected set under one test.

    Pairs come out grouped by splat row (input order), tiles ascending.
    Also returns a dict of pair counts per stage.
    """
    mode = mode or cfg.intersection_mode
    cx, cy = ps.mu[:, 0], ps.mu[:, 1]
    if mode == "aabb3sigma":
        r = 3.0 * np.sqrt(ps.lambda1)
        splat, tile = _rect_tiles(cx, cy, r, r, grid)
        return splat, tile, {"aabb3sigma": int(splat.size)}
    splat, tile = _rect_tiles(cx, cy, ps.half_w, ps.half_h, grid)
    counts = {"stage1_tight": int(splat.size)}
    if mode == "tight":
        return splat, tile, counts
    if mode == "two_stage":
        keep = stage2_keep(ps.mu[splat], ps.e_minor[splat], ps.r_minor[splat],
                           grid.tile_center(tile), grid.circumradius, cfg.stage2_form)
        splat, tile = splat[keep], tile[keep]
        counts["stage2"] = int(splat.size)
        return splat, tile, counts
    if mode == "exact":
        keep = np.zeros(splat.size, dtype=np.bool_)
        _kernels.exact_pair_mask(splat, tile, ps.mu, ps.conic, ps.opacity,
                                 _kernels.qcut_for(ps.opacity, cfg.tau), grid.tiles_x,
                                 grid.tile_size, cfg.tau, keep)
        splat, tile = splat[keep], tile[keep]
        counts["exact"] = int(splat.size)
        return splat, tile, counts
    raise ValueError(f"unknown intersection mode {mode!r}")


def _tiles_for(pg: ProjectedGaussian, grid: TileGrid, cfg: RenderConfig, mode: str) -> list[int]:
    _, tile, _ = intersect_pairs(ProjectedSet.from_projected([pg]), grid, cfg, mode)
    return [int(t) for t in tile]


def aabb_tiles_baseline(pg: ProjectedGaussian, grid: TileGrid) -> list[int]:
    return _tiles_for(pg, grid, RenderConfig(), "aabb3sigma")


def tight_tiles(pg: ProjectedGaussian, grid: TileGrid, cfg: RenderConfig | None = None) -> list[int]:
    return _tiles_for(pg, grid, cfg or RenderConfig(), "tight")


def two_stage_tiles(pg: ProjectedGaussian, grid: TileGrid, cfg: RenderConfig | None = None) -> list[int]:
    return _tiles_for(pg, grid, cfg or RenderConfig(), "two_stage")


def exact_tiles(pg: ProjectedGaussian, grid: TileGrid, tau: float = 1 / 255) -> list[int]:
    """Brute force: tiles holding a pixel centre whose density reaches ``tau``."""
    return _tiles_for(pg, grid, RenderConfig(tau=tau), "exact")
