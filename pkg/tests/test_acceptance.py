"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line; ``conftest.py`` prints them after the
run. ``python tests/test_acceptance.py`` runs just this file.
"""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from lsgaussian.metrics import psnr, ssim
from lsgaussian.preprocess import (
    RenderConfig, TileGrid, effective_radii, exact_tiles, intersect_pairs, project_set, tight_bbox,
    two_stage_tiles,
)
from lsgaussian.rasterizer import brute_force_reference, render_frame_full
from lsgaussian.scene import desk_camera, desk_trajectory, generate_synthetic_scene
from lsgaussian.scheduler import SchedulerConfig, assign_blocks, schedule, zipf_workloads
from lsgaussian.stream import run_stream
from lsgaussian.viewtrans import WarpConfig, warp_frame

from ._support import random_splat, splat

RESULTS: dict[int, str] = {}

# 30-digit evaluations (mpmath) of the iso-opacity radii at tau = 1/255
R255 = 3.329042969130445
R255_X4 = 6.658085938260891
R255_X25 = 5.263679105510910


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def desk_scene(seed):
    return generate_synthetic_scene(seed, 5000, 4.0)


pytestmark = pytest.mark.slow


def test_c01_renderer_vs_brute_force():
    t0 = time.perf_counter()
    pose = desk_camera()
    worst = math.inf
    for seed in range(10):
        gset = desk_scene(seed)
        worst = min(worst, psnr(render_frame_full(gset, pose).color, brute_force_reference(gset, pose).color))
    dt = time.perf_counter() - t0
    record(1, worst >= 50 and dt <= 120, f"min PSNR {worst:.2f} dB over 10 scenes, {dt:.1f} s")


def test_c02_intersection_soundness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    grid = TileGrid(16, 16)
    violations = 0
    for _ in range(1200):
        pg = random_splat(rng, grid)
        violations += len(set(exact_tiles(pg, grid)) - set(two_stage_tiles(pg, grid)))
    cfg = RenderConfig()
    pairs = {"two_stage": 0, "aabb3sigma": 0}
    for seed in range(3):
        gset = desk_scene(seed)
        for pose in desk_trajectory().poses:
            ps = project_set(gset, pose, cfg)
            g = TileGrid.for_pose(pose)
            for mode in pairs:
                pairs[mode] += int(intersect_pairs(ps, g, cfg, mode)[0].size)
    ratio = pairs["two_stage"] / pairs["aabb3sigma"]
    dt = time.perf_counter() - t0
    record(2, violations == 0 and ratio <= 0.5 and dt <= 60,
           f"{violations} subset violations; pairs ratio two_stage/aabb3sigma {ratio:.3f} (need <= 0.5), {dt:.1f} s")


def test_c03_radii_numerics():
    errs = []
    r1, r2 = effective_radii(1.0, 1.0, 1.0)
    errs += [abs(r1 - R255), abs(r2 - R255)]
    errs += list(np.abs(np.subtract(tight_bbox(splat((0, 0), np.diag([4.0, 1.0]))), (R255_X4, R255))))
    errs += list(np.abs(np.subtract(tight_bbox(splat((0, 0), [[2.5, 1.5], [1.5, 2.5]])), (R255_X25, R255_X25))))
    r1, r2 = effective_radii(0.5, 9.0, 4.0)
    k = math.sqrt(2 * math.log(0.5 * 255))
    errs += [abs(r1 - 3 * k), abs(r2 - 2 * k)]
    record(3, max(errs) <= 1e-6, f"max abs error {max(errs):.2e}")


def test_c04_early_stop_bound():
    worst = 0.0
    for seed in range(3):
        gset = desk_scene(seed)
        for pose in desk_trajectory().poses[::3]:
            for bg in ((0, 0, 0), (1, 1, 1)):
                a = render_frame_full(gset, pose, RenderConfig(background=bg))
                b = render_frame_full(gset, pose, RenderConfig(background=bg, early_stop=False))
                worst = max(worst, float(np.abs(a.color - b.color).max()))
    record(4, worst <= 2e-4, f"max channel difference {worst:.2e}")


def _shadow_psnr(gset, poses, warp):
    return [r.quality["psnr"] for r in run_stream(gset, poses, warp=warp, shadow=True)]


def test_c05_twsr_quality_ordering():
    t0 = time.perf_counter()
    gset = desk_scene(1)
    poses = desk_trajectory().poses
    assert len(poses) == 7
    mask = _shadow_psnr(gset, poses, WarpConfig(window=5))
    nomask = _shadow_psnr(gset, poses, WarpConfig(window=5, mask_enabled=False))
    pixel = _shadow_psnr(gset, poses, WarpConfig(window=5, mode="pixel_warp"))
    ok = mask[6] >= nomask[6] >= pixel[6]
    ok &= all(mask[k] >= nomask[k] for k in range(3, 7))
    dt = time.perf_counter() - t0
    ok &= dt <= 180
    detail = " ".join(f"f{k}:{mask[k]:.2f}/{nomask[k]:.2f}/{pixel[k]:.2f}" for k in range(3, 7))
    record(5, ok, f"mask/nomask/pixel PSNR {detail}, {dt:.1f} s")


def test_c06_identity_warp():
    gset, pose = desk_scene(0), desk_camera()
    ref = render_frame_full(gset, pose)
    ref.interp_mask[40:60, 40:60] = True
    out, _ = warp_frame(ref, pose, pose, WarpConfig())
    keep = ref.valid & ~ref.interp_mask
    exact = out.color[keep].tobytes() == ref.color[keep].tobytes()
    ref.interp_mask[:] = False
    _, plan = warp_frame(ref, pose, pose, WarpConfig())
    record(6, exact and len(plan.rerender_tiles) == 0,
           f"bit-exact on unmasked pixels: {exact}; tiles re-rendered on full frame: {len(plan.rerender_tiles)}")


def test_c07_dpes_fidelity():
    worst = math.inf
    for seed in range(2):
        gset = desk_scene(seed)
        poses = desk_trajectory().poses
        a = run_stream(gset, poses, warp=WarpConfig())
        b = run_stream(gset, poses, warp=WarpConfig(dpes=False))
        worst = min(worst, min(psnr(x.frame.color, y.frame.color) for x, y in zip(a, b)))
    record(7, worst >= 40, f"min PSNR between DPES and no-DPES streams {worst:.2f} dB")


def test_c08_workload_reduction():
    stream_pairs = render_pairs = 0
    for seed in range(2):
        gset = desk_scene(seed)
        poses = desk_trajectory().poses
        stream_pairs += sum(r.counters.blended_pairs for r in run_stream(gset, poses, warp=WarpConfig()))
        render_pairs += sum(r.counters.blended_pairs
                            for r in run_stream(gset, poses, warp=WarpConfig(window=0)))
    ratio = stream_pairs / render_pairs
    record(8, ratio <= 0.5, f"blended pairs stream/render {ratio:.3f}")


def test_c09_scheduler():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    util = {"ldu": [], "naive_round_robin": []}
    spreads, broken = [], 0
    tiles = np.arange(256)
    for _ in range(100):
        loads = zipf_workloads(rng)
        spreads.append(loads.max() / loads.min())
        for policy in util:
            cfg = SchedulerConfig(num_blocks=16, policy=policy)
            rep = schedule(tiles, loads, cfg, 16)
            util[policy].append(rep.utilization)
            a = assign_blocks(tiles, loads, cfg, 16)
            flat = sorted(t for b in a.blocks for t in b)
            broken += flat != tiles.tolist()
            if policy == "ldu":
                broken += any(len(b) > 1 and sum(loads[t] for t in b) > a.cap + 1e-9 for b in a.blocks[:-1])
    ldu, naive = float(np.mean(util["ldu"])), float(np.mean(util["naive_round_robin"]))
    dt = time.perf_counter() - t0
    record(9, ldu >= 0.85 and naive <= 0.65 and broken == 0 and min(spreads) > 10 and dt <= 60,
           f"mean utilization ldu {ldu:.3f}, naive {naive:.3f}; min load spread {min(spreads):.1f}x; "
           f"{broken} invariant violations, {dt:.1f} s")


def test_c10_metrics():
    from .test_metrics import ssim_loops

    a = np.full((16, 16, 3), 0.2)
    ok = psnr(a, a) == 99 and abs(psnr(a, a + 0.1) - 20) < 1e-9 and abs(psnr(a, a + 0.5) - 6.0206) < 1e-4
    board = np.repeat((np.indices((32, 32)).sum(axis=0) % 2).astype(float)[..., None], 3, axis=2)
    ok &= abs(ssim(board, board) - 1) < 1e-12 and ssim(board, 1 - board) < 0
    rng = np.random.default_rng(10)
    err = 0.0
    for _ in range(3):
        x = rng.uniform(size=(32, 32, 3))
        y = np.clip(x + rng.normal(scale=0.15, size=x.shape), 0, 1)
        err = max(err, abs(ssim(x, y) - ssim_loops(x, y)))
    record(10, ok and err <= 1e-6, f"examples ok: {ok}; SSIM vs loop oracle max error {err:.1e}")


def test_c11_determinism(tmp_path):
    outs = []
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        env = dict(os.environ, LSG_THREADS=str(threads))
        subprocess.run([sys.executable, "-m", "lsgaussian.cli", "stream", "--count", "3000",
                        "--width", "128", "--height", "128", "--shadow", "--depth", "--no-figures",
                        "--out", str(out)], env=env, check=True)
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    same = names == sorted(p.name for p in outs[1].iterdir()) and all(
        (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    frames = len(json.loads((outs[0] / "stats.json").read_text())["frames"])
    record(11, same, f"{len(names)} files over {frames} frames byte-identical for LSG_THREADS 1 vs 8: {same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
