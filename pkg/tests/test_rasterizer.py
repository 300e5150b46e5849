import math

import numpy as np
import pytest

from lsgaussian.binning import PairList, sort_pairs
from lsgaussian.metrics import WorkloadCounters, psnr
from lsgaussian.preprocess import ProjectedSet, RenderConfig, TileGrid
from lsgaussian.rasterizer import (
    FrameBuffers, brute_force_reference, pixel_density, prepare_pairs, rasterize,
    render_frame_full, render_tile,
)
from lsgaussian.scene import GaussianSet, generate_synthetic_scene, look_at

from ._support import TAU, splat

GRID = TileGrid(2, 2)


def tile0_pairs(ps):
    n = len(ps)
    return sort_pairs(PairList.from_arrays(GRID.num_tiles, np.zeros(n, dtype=np.int64), np.arange(n),
                                           ps.ids, ps.depth))


def blend_oracle(pgs, px, py, tau=TAU, t_stop=1e-4, early_stop=True, bg=(0, 0, 0)):
    """Front-to-back compositing of already sorted splats at one pixel centre."""
    T, rgb, acc_a, acc_d, dmax, depths = 1.0, np.zeros(3), 0.0, 0.0, 0.0, []
    for pg in pgs:
        a = pixel_density(pg, (px, py))
        if a < tau:
            continue
        w = a * T
        rgb += pg.color * w
        acc_a += w
        acc_d += pg.depth * w
        dmax = pg.depth
        depths.append(pg.depth)
        T_new = T * (1 - a)
        assert 0 < T_new < T
        T = T_new
        if early_stop and T < t_stop:
            break
    depth = acc_d / acc_a if acc_a > 1e-6 else math.nan
    return rgb + T * np.asarray(bg, dtype=float), depth, dmax, depths


# ---------------------------------------------------------------- density

def test_density_at_centre():
    assert pixel_density(splat((5, 5), np.eye(2), 0.7), (5, 5)) == pytest.approx(0.7)
    assert pixel_density(splat((5, 5), np.eye(2), 1.0), (5, 5)) == 0.99


def test_density_tau_radius():
    r = math.sqrt(2 * math.log(255))
    assert pixel_density(splat((0, 0), np.eye(2), 1.0), (r, 0)) == pytest.approx(1 / 255, rel=1e-12)


def test_density_zero_opacity():
    assert pixel_density(splat((0, 0), np.eye(2), 0.0), (0, 0)) == 0.0


# ---------------------------------------------------------------- single tile

def test_no_pairs_background():
    bg = (0.2, 0.3, 0.4)
    ps = ProjectedSet.from_projected([])
    color, depth, dmax = render_tile(ps, tile0_pairs(ps), 0, GRID, RenderConfig(background=bg))
    assert np.allclose(color, bg) and np.isnan(depth).all() and (dmax == 0).all()


def test_single_half_alpha():
    ps = ProjectedSet.from_projected([splat((8.5, 8.5), np.eye(2), 0.5, depth=2.0, color=(1, 0, 0))])
    color, depth, dmax = render_tile(ps, tile0_pairs(ps), 0, GRID, RenderConfig())
    assert np.allclose(color[8, 8], [0.5, 0, 0])
    assert depth[8, 8] == pytest.approx(2.0) and dmax[8, 8] == 2.0


def test_two_half_alphas():
    bg = np.array([0.2, 0.4, 0.8])
    ps = ProjectedSet.from_projected([
        splat((8.5, 8.5), np.eye(2), 0.5, depth=3.0, color=(0, 1, 0), gid=1),
        splat((8.5, 8.5), np.eye(2), 0.5, depth=1.5, color=(1, 0, 0), gid=0),
    ])
    color, depth, dmax = render_tile(ps, tile0_pairs(ps), 0, GRID, RenderConfig(background=tuple(bg)))
    assert np.allclose(color[8, 8], np.array([0.5, 0.25, 0]) + 0.25 * bg)
    assert depth[8, 8] == pytest.approx((0.5 * 1.5 + 0.25 * 3.0) / 0.75)
    assert dmax[8, 8] == 3.0


def test_tile_matches_python_oracle():
    rng = np.random.default_rng(9)
    pgs = []
    for i in range(40):
        a = rng.uniform(0.5, 30)
        b = rng.uniform(-0.5, 0.5) * a
        pgs.append(splat(rng.uniform(-4, 20, 2), [[a, b], [b, rng.uniform(0.6, 30)]],
                         rng.uniform(0.05, 1.0), depth=rng.uniform(1, 5), color=rng.uniform(0, 1, 3), gid=i))
    ps = ProjectedSet.from_projected(pgs)
    pairs = tile0_pairs(ps)
    order = [pgs[r] for r in pairs.rows]
    bg = (0.1, 0.2, 0.3)
    for es in (True, False):
        cfg = RenderConfig(background=bg, early_stop=es)
        color, depth, dmax = render_tile(ps, pairs, 0, GRID, cfg)
        for y in range(16):
            for x in range(16):
                c, d, dm, depths = blend_oracle(order, x + 0.5, y + 0.5, early_stop=es, bg=bg)
                assert np.allclose(color[y, x], c, atol=1e-12)
                assert dmax[y, x] == dm
                if depths:
                    assert min(depths) - 1e-12 <= depth[y, x] <= max(depths) + 1e-12
                    assert depth[y, x] == pytest.approx(d, rel=1e-12)


# ---------------------------------------------------------------- whole frames

def small_scene(seed=0, count=800):
    return generate_synthetic_scene(seed, count, 2.0), look_at((0, 0, -2.2), (0, 0, 0), width=96, height=96)


def test_empty_scene_frame():
    pose = look_at((0, 0, -3), (0, 0, 0), width=64, height=64)
    f = render_frame_full(GaussianSet.empty(), pose, RenderConfig(background=(0.5, 0.5, 0.5)))
    assert np.allclose(f.color, 0.5) and f.valid.all() and not f.interp_mask.any()
    assert np.isnan(f.depth).all()


def test_single_centred_splat_matches_brute():
    pose = look_at((0, 0, -3), (0, 0, 0), width=64, height=64)
    g = GaussianSet([[0, 0, 0]], [[0.05, 0.08, 0.03]], [[0.9, 0.1, 0.2, 0.3]], [0.8], np.zeros((1, 48)))
    a = render_frame_full(g, pose)
    b = brute_force_reference(g, pose)
    assert np.array_equal(a.color, b.color)


def test_brute_force_agreement():
    gset, pose = small_scene()
    a = render_frame_full(gset, pose)
    b = brute_force_reference(gset, pose)
    assert psnr(a.color, b.color) >= 50


def test_exact_vs_two_stage():
    gset, pose = small_scene(1)
    a = render_frame_full(gset, pose, RenderConfig(intersection_mode="exact"))
    b = render_frame_full(gset, pose, RenderConfig(intersection_mode="two_stage"))
    assert psnr(a.color, b.color) >= 50


def test_early_stop_error_bound():
    gset, pose = small_scene(2, 1500)
    for bg in ((0, 0, 0), (1, 1, 1)):
        a = render_frame_full(gset, pose, RenderConfig(background=bg))
        b = render_frame_full(gset, pose, RenderConfig(background=bg, early_stop=False))
        assert np.abs(a.color - b.color).max() <= 1e-4 * (1 + max(bg))


def test_tile_order_and_threads_do_not_matter():
    gset, pose = small_scene(3)
    ref = render_frame_full(gset, pose, threads=1)
    perm = np.random.default_rng(0).permutation(TileGrid.for_pose(pose).num_tiles)
    for threads, order in ((4, None), (1, perm), (3, perm[::-1])):
        f = render_frame_full(gset, pose, threads=threads, tile_order=order)
        assert f.color.tobytes() == ref.color.tobytes()
        assert np.array_equal(f.depth, ref.depth, equal_nan=True)
        assert f.depth_max.tobytes() == ref.depth_max.tobytes()


def test_counters_filled():
    gset, pose = small_scene(4)
    c = WorkloadCounters()
    render_frame_full(gset, pose, counters=c)
    assert c.gaussians_in == len(gset) and c.pairs > 0 and c.blended_pairs > 0
    assert c.pairs == c.pairs_after_dpes and c.pixels_rendered == 96 * 96
    assert c.tiles_interpolated == 0


def test_partial_rasterize_marks_region():
    gset, pose = small_scene(5)
    cfg = RenderConfig()
    ps, grid, pairs = prepare_pairs(gset, pose, cfg)
    frame = FrameBuffers.blank(pose.height, pose.width)
    frame.interp_mask[:] = True
    rasterize(ps, pairs, grid, cfg, frame, tiles=[0, 14])  # 6x6 grid: (0,0) and (2,2)
    assert frame.valid[:16, :16].all() and frame.valid[32:48, 32:48].all()
    assert frame.valid[16:32, 16:32].sum() == 0
    assert frame.valid.sum() == 2 * 256
    assert not frame.interp_mask[:16, :16].any() and frame.interp_mask[48:, 48:].all()
    full = render_frame_full(gset, pose)
    assert np.array_equal(frame.color[:16, :16], full.color[:16, :16])
