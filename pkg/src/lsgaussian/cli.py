"""Command-line front end: ``lsgaussian {render,stream,bench,gen}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import export, plotting
from .metrics import WorkloadCounters, workload_report
from .preprocess import INTERSECTION_MODES, STAGE2_FORMS, RenderConfig, TileGrid, intersect_pairs, project_set
from .rasterizer import render_frame_full
from .scene import (
    PlyError, Trajectory, desk_camera, desk_trajectory, generate_synthetic_scene,
    interpolate_trajectory, load_ply, load_trajectory, look_at, save_trajectory, write_ply,
)
from .scheduler import SchedulerConfig, schedule, zipf_workloads
from .stream import render_full_record, stream_frames
from .viewtrans import WarpConfig

SCHEMA = 1
POLICY_NAMES = {"naive": "naive_round_robin", "ldu": "ldu"}


class CliError(Exception):
    pass


# --------------------------------------------------------------------------- inputs

def _scene(args):
    if args.scene:
        return load_ply(args.scene)
    return generate_synthetic_scene(args.seed, args.count, args.extent)


def _trajectory(args) -> Trajectory:
    if args.traj:
        return load_trajectory(args.traj, args.window)
    return desk_trajectory(args.frames - 1, args.width, args.height, window=args.window)


def _render_config(args) -> RenderConfig:
    return RenderConfig(intersection_mode=args.intersection, stage2_form=args.stage2,
                        background=tuple(args.background))


def _warp_config(args) -> WarpConfig:
    return WarpConfig(window=args.window, mask_enabled=args.mask == "on",
                      mode=f"{args.warp_mode}_warp", dpes=not args.no_dpes)


def _sched_config(args, policy=None) -> SchedulerConfig:
    return SchedulerConfig(num_blocks=args.blocks, policy=POLICY_NAMES[policy or args.scheduler])


def _run_config(args) -> dict:
    # Output locations and thread counts stay out so stats compare byte-for-byte.
    skip = {"out", "stats", "func", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# --------------------------------------------------------------------------- outputs

def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def _write_frame(out: Path, index: int, frame, args) -> None:
    export.write_ppm(out / f"frame_{index:05d}.ppm", frame.color)
    if args.png:
        export.write_png(out / f"frame_{index:05d}.png", frame.color)
    if args.depth:
        export.write_depth(out / f"depth_{index:05d}.raw", frame.depth)


def _write_stats(args, out: Path, payload: dict) -> Path:
    path = Path(args.stats) if args.stats else out / "stats.json"
    doc = {"schema": SCHEMA, "command": args.command, "config": _run_config(args)}
    doc.update(payload)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=False, default=_json_default) + "\n")
    return path


def _json_default(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _write_csv(path: Path, header: list, rows: list) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _finite(x):
    return None if x is None or not np.isfinite(x) else float(x)


# --------------------------------------------------------------------------- commands

def cmd_render(args) -> int:
    gset, traj = _scene(args), _trajectory(args)
    cfg, sched = _render_config(args), _sched_config(args)
    out = _out_dir(args)
    frames, rows = [], []
    for t, pose in enumerate(traj.poses):
        rec = render_full_record(gset, pose, t, cfg, sched, None)
        _write_frame(out, t, rec.frame, args)
        frames.append(rec.summary())
        c = rec.counters
        rows.append([t, c.pairs, c.blended_pairs, c.early_stops,
                     f"{rec.schedule.utilization:.6f}" if rec.schedule else ""])
    _write_csv(out / "frames.csv", ["frame", "pairs", "blended_pairs", "early_stops", "utilization"], rows)
    totals = workload_report(*[_counters(f) for f in frames])
    _write_stats(args, out, {"frames": frames, "totals": totals})
    return 0


def _counters(summary: dict) -> WorkloadCounters:
    return WorkloadCounters(**summary["counters"])


def cmd_stream(args) -> int:
    gset, traj = _scene(args), _trajectory(args)
    if len(traj) < args.window + 1:
        raise CliError(f"trajectory has {len(traj)} poses, need at least window + 1 = {args.window + 1}")
    cfg, warp, sched = _render_config(args), _warp_config(args), _sched_config(args)
    out = _out_dir(args)
    frames, rows, util, quality = [], [], [], {"psnr": [], "ssim": []}
    last_schedule = None
    for rec in stream_frames(gset, traj.poses, cfg, warp, sched, args.shadow):
        _write_frame(out, rec.index, rec.frame, args)
        s = rec.summary()
        if rec.plan is not None:
            s["plan"] = {"interpolate": int(len(rec.plan.interpolate_tiles)),
                         "rerender": int(len(rec.plan.rerender_tiles))}
        frames.append(s)
        u = rec.schedule.utilization if rec.schedule else None
        util.append(u if u is not None else np.nan)
        # prefer a warped frame's timeline; fall back to a full render's
        if rec.schedule is not None and (rec.kind == "warped" or last_schedule is None):
            last_schedule = rec.schedule
        q = rec.quality
        for k in quality:
            if q:
                quality[k].append(q[k])
        c = rec.counters
        rows.append([rec.index, rec.kind, c.pairs, c.pairs_after_dpes, c.blended_pairs,
                     c.tiles_interpolated, c.tiles_rerendered,
                     "" if u is None else f"{u:.6f}",
                     f"{q['psnr']:.6f}" if q else "", f"{q['ssim']:.6f}" if q else ""])
    _write_csv(out / "frames.csv",
               ["frame", "kind", "pairs", "pairs_after_dpes", "blended_pairs", "tiles_interpolated",
                "tiles_rerendered", "utilization", "psnr", "ssim"], rows)
    finite = [u for u in util if np.isfinite(u)]
    payload = {"frames": frames, "totals": workload_report(*[_counters(f) for f in frames]),
               "utilization_mean": float(np.mean(finite)) if finite else None}
    if args.shadow:
        payload["quality"] = quality
        plotting.plot_quality({f"{args.warp_mode}_warp": quality["psnr"]}, out / "psnr.png")
    if args.figures:
        plotting.plot_utilization({args.scheduler: util}, out / "utilization.png")
        if last_schedule is not None:
            plotting.plot_timeline(last_schedule, out / "timeline.png")
    _write_stats(args, out, payload)
    return 0


def cmd_bench(args) -> int:
    gset, traj = _scene(args), _trajectory(args)
    cfg, warp = _render_config(args), _warp_config(args)
    out = _out_dir(args)

    pairs = {m: 0 for m in INTERSECTION_MODES}
    for pose in traj.poses:
        ps = project_set(gset, pose, cfg)
        grid = TileGrid.for_pose(pose)
        for m in INTERSECTION_MODES:
            pairs[m] += int(intersect_pairs(ps, grid, cfg, m)[0].size)

    baseline = WorkloadCounters()
    for pose in traj.poses:
        render_frame_full(gset, pose, cfg, counters=baseline)

    streaming = WorkloadCounters()
    per_policy = {p: [] for p in POLICY_NAMES}
    makespan = {p: 0.0 for p in POLICY_NAMES}
    timelines = {}
    for rec in stream_frames(gset, traj.poses, cfg, warp, None):
        streaming.merge(rec.counters)
        tiles = np.arange(len(rec.tile_loads)) if rec.plan is None else rec.plan.rerender_tiles
        for p in POLICY_NAMES:
            if len(tiles) == 0:
                per_policy[p].append(1.0)
                continue
            rep = schedule(tiles, rec.tile_loads, _sched_config(args, p), traj.poses[rec.index].tiles_x)
            per_policy[p].append(rep.utilization)
            makespan[p] += rep.makespan
            if rec.kind == "warped":
                timelines[p] = rep

    rng = np.random.default_rng(args.seed)
    zipf = {p: [] for p in POLICY_NAMES}
    for _ in range(args.zipf_trials):
        loads = zipf_workloads(rng)
        tiles = np.arange(len(loads))
        for p in POLICY_NAMES:
            zipf[p].append(schedule(tiles, loads, _sched_config(args, p), 16).utilization)

    speedup = baseline.blended_pairs / streaming.blended_pairs if streaming.blended_pairs else None
    payload = {
        "pairs_by_mode": pairs,
        "pair_reduction": {m: pairs[m] / pairs["aabb3sigma"] if pairs["aabb3sigma"] else None
                           for m in INTERSECTION_MODES},
        "baseline": workload_report(baseline),
        "streaming": workload_report(streaming),
        "algorithmic_speedup": speedup,
        "utilization": {p: {"per_frame": v, "mean": float(np.mean(v)), "makespan": makespan[p]}
                        for p, v in per_policy.items()},
        "zipf_utilization": {p: {"mean": float(np.mean(v)) if v else None, "trials": len(v)}
                             for p, v in zipf.items()},
    }
    _write_csv(out / "pairs.csv", ["mode", "pairs"], [[m, pairs[m]] for m in INTERSECTION_MODES])
    _write_csv(out / "utilization.csv", ["frame"] + list(POLICY_NAMES),
               [[i] + [f"{per_policy[p][i]:.6f}" for p in POLICY_NAMES] for i in range(len(traj))])
    if args.figures:
        plotting.plot_pair_counts(pairs, out / "pairs.png")
        plotting.plot_utilization(per_policy, out / "utilization.png")
        for p, rep in timelines.items():
            plotting.plot_timeline(rep, out / f"timeline_{p}.png")
    _write_stats(args, out, payload)
    return 0


def cmd_gen(args) -> int:
    out = _out_dir(args)
    gset = generate_synthetic_scene(args.seed, args.count, args.extent)
    write_ply(gset, out / "scene.ply")
    start = desk_camera(args.width, args.height)
    shift = (args.frames - 1) * args.v_max / args.fps
    end = look_at((shift, 0.0, -3.0), (1.3 * shift, 0.0, 0.0), width=args.width, height=args.height)
    traj = interpolate_trajectory([start, end], args.fps, args.v_max, args.omega_max, args.window)
    save_trajectory(traj, out / "traj.json")
    _write_stats(args, out, {"gaussians": len(gset), "poses": len(traj),
                             "fps": traj.fps, "v_max": traj.v_max, "omega_max": traj.omega_max})
    return 0


# --------------------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--scene", help="3DGS PLY file; a synthetic scene is generated when omitted")
    g.add_argument("--traj", help="trajectory JSON; a short desk pan is used when omitted")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=5000, help="synthetic Gaussian count")
    g.add_argument("--extent", type=float, default=4.0, help="synthetic scene cube side (m)")
    g.add_argument("--frames", type=int, default=7, help="poses in the default trajectory")
    g.add_argument("--width", type=int, default=256)
    g.add_argument("--height", type=int, default=256)
    g = p.add_argument_group("pipeline")
    g.add_argument("--window", type=int, default=5, help="warped frames between full renders")
    g.add_argument("--intersection", choices=INTERSECTION_MODES, default="two_stage")
    g.add_argument("--stage2", choices=STAGE2_FORMS, default="conservative")
    g.add_argument("--scheduler", choices=list(POLICY_NAMES), default="ldu")
    g.add_argument("--blocks", type=int, default=16)
    g.add_argument("--mask", choices=("on", "off"), default="on")
    g.add_argument("--warp-mode", choices=("tile", "pixel"), default="tile")
    g.add_argument("--no-dpes", action="store_true", help="disable depth-bound culling")
    g.add_argument("--background", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("R", "G", "B"))
    g.add_argument("--shadow", action="store_true", help="compare every frame with a full render")
    g = p.add_argument_group("outputs")
    g.add_argument("--out", default="out", help="output directory")
    g.add_argument("--stats", help="stats JSON path (default OUT/stats.json)")
    g.add_argument("--png", action="store_true", help="also write PNG frames (needs Pillow)")
    g.add_argument("--depth", action="store_true", help="write float32 depth maps")
    g.add_argument("--no-figures", dest="figures", action="store_false")
    g.add_argument("--zipf-trials", type=int, default=20, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsgaussian", description="Streaming Gaussian-splat renderer.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, text in [
        ("render", cmd_render, "full render of every pose"),
        ("stream", cmd_stream, "warped streaming with sparse re-rendering"),
        ("bench", cmd_bench, "intersection and scheduler comparison"),
        ("gen", cmd_gen, "write a synthetic scene and trajectory"),
    ]:
        p = sub.add_parser(name, help=text)
        _common(p)
        p.set_defaults(func=func)
    gen = sub.choices["gen"]
    gen.add_argument("--fps", type=float, default=90.0)
    gen.add_argument("--v-max", type=float, default=1.8, help="translation cap (m/s)")
    gen.add_argument("--omega-max", type=float, default=90.0, help="rotation cap (deg/s)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.window < 0:
            raise CliError("--window must be >= 0")
        if args.blocks < 1:
            raise CliError("--blocks must be >= 1")
        return args.func(args)
    except (CliError, PlyError, OSError, ValueError, KeyError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"lsgaussian: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
