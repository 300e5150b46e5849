"""Frame-sequential streaming renderer: full renders every ``window + 1``
frames, warped frames with sparse tile re-rendering in between."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .metrics import WorkloadCounters, psnr, ssim
from .preprocess import RenderConfig
from .rasterizer import FrameBuffers, prepare_pairs, rasterize, render_frame_full
from .scene import CameraPose, GaussianSet
from .scheduler import SchedulerConfig, UtilizationReport, estimate_tile_load, schedule
from .viewtrans import RERENDER, TilePlan, WarpConfig, warp_frame


@dataclass
class FrameRecord:
    index: int
    kind: str  # "full" or "warped"
    frame: FrameBuffers
    counters: WorkloadCounters
    plan: TilePlan | None = None
    schedule: UtilizationReport | None = None
    tile_loads: np.ndarray | None = None
    quality: dict = field(default_factory=dict)

    def summary(self) -> dict:
        from .metrics import workload_report

        d = {"frame": self.index, "kind": self.kind, "counters": workload_report(self.counters)}
        if self.schedule is not None:
            d["schedule"] = self.schedule.to_dict()
        if self.quality:
            d["quality"] = dict(self.quality)
        return d


def _schedule(tiles, loads, sched: SchedulerConfig | None, tiles_x: int):
    if sched is None or len(tiles) == 0:
        return None
    return schedule(tiles, loads, sched, tiles_x)


def render_full_record(gset, pose, index, cfg, sched, threads) -> FrameRecord:
    counters = WorkloadCounters()
    ps, grid, pairs = prepare_pairs(gset, pose, cfg, counters=counters)
    frame = FrameBuffers.blank(pose.height, pose.width, cfg.background)
    rasterize(ps, pairs, grid, cfg, frame, threads=threads, counters=counters)
    loads = pairs.tile_counts()
    tiles = np.arange(grid.num_tiles)
    return FrameRecord(index, "full", frame, counters, None,
                       _schedule(tiles, loads, sched, grid.tiles_x), loads)


def render_warped_record(gset, ref: FrameBuffers, ref_pose: CameraPose, pose: CameraPose,
                         index: int, cfg: RenderConfig, warp: WarpConfig,
                         sched: SchedulerConfig | None, threads) -> FrameRecord:
    counters = WorkloadCounters()
    target, plan = warp_frame(ref, ref_pose, pose, warp)
    rerender = plan.rerender_tiles
    counters.tiles_rerendered = int(len(rerender))
    counters.tiles_interpolated = int(plan.grid.num_tiles - len(rerender))
    active = plan.status == RERENDER
    bounds = plan.bound if (warp.dpes and warp.mode == "tile_warp") else None
    ps, grid, pairs = prepare_pairs(gset, pose, cfg, active_tiles=active, bounds=bounds,
                                    counters=counters)
    loads = estimate_tile_load(plan, pairs)
    if warp.mode == "pixel_warp":
        pix_mask = ~target.valid
    else:
        pix_mask = None
    if len(rerender):
        rasterize(ps, pairs, grid, cfg, target, tiles=rerender, pix_mask=pix_mask,
                  threads=threads, counters=counters)
    return FrameRecord(index, "warped", target, counters, plan,
                       _schedule(rerender, loads, sched, grid.tiles_x), loads)


def stream_frames(gset: GaussianSet, poses: Sequence[CameraPose], cfg: RenderConfig | None = None,
                  warp: WarpConfig | None = None, sched: SchedulerConfig | None = None,
                  shadow: bool = False, threads: int | None = None) -> Iterator[FrameRecord]:
    """Yield one :class:`FrameRecord` per pose.

    Frame ``t`` is fully rendered when ``t % (window + 1) == 0``; otherwise it is
    warped from frame ``t - 1``. With ``shadow`` each frame is compared with an
    independent full render of the same pose.
    """
    cfg = cfg or RenderConfig()
    warp = warp or WarpConfig()
    period = warp.window + 1
    prev: FrameRecord | None = None
    for t, pose in enumerate(poses):
        if t % period == 0 or prev is None:
            rec = render_full_record(gset, pose, t, cfg, sched, threads)
        else:
            rec = render_warped_record(gset, prev.frame, poses[t - 1], pose, t, cfg, warp,
                                       sched, threads)
        if shadow:
            ref = render_frame_full(gset, pose, cfg, threads=threads)
            rec.quality = {"psnr": psnr(ref.color, rec.frame.color),
                           "ssim": ssim(ref.color, rec.frame.color)}
        prev = rec
        yield rec


def run_stream(gset, poses, cfg=None, warp=None, sched=None, shadow=False, threads=None):
    """Materialised :func:`stream_frames`."""
    return list(stream_frames(gset, poses, cfg, warp, sched, shadow, threads))
