"""Load distribution across rasterization blocks and a sorter/rasterizer
pipeline simulator that reports utilization, bubbles and idle time."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

POLICIES = ("naive_round_robin", "ldu")
INTRA_ORDERS = ("arbitrary", "light_to_heavy")


@dataclass(frozen=True)
class SchedulerConfig:
    num_blocks: int = 16
    policy: str = "ldu"
    sort_cost: float = 1.0
    raster_cost: float = 4.0
    intra_order: str | None = None  # defaults per policy

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.sort_cost <= 0 or self.raster_cost <= 0:
            raise ValueError("cost coefficients must be positive")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.intra_order is not None and self.intra_order not in INTRA_ORDERS:
            raise ValueError(f"unknown intra-block order {self.intra_order!r}")

    @property
    def order(self) -> str:
        if self.intra_order is not None:
            return self.intra_order
        return "light_to_heavy" if self.policy == "ldu" else "arbitrary"


@dataclass
class BlockAssignment:
    blocks: list  # per block, ordered list of tile ids
    loads: dict   # tile id -> load
    cap: float = math.inf

    @property
    def block_loads(self) -> list:
        return [sum(self.loads[t] for t in b) for b in self.blocks]


@dataclass
class UtilizationReport:
    policy: str
    blocks: int
    makespan: float
    utilization: float
    bubble_time: float
    idle_time: float
    per_block: list = field(default_factory=list)
    timeline: list = field(default_factory=list)

    def to_dict(self, timeline: bool = False) -> dict:
        d = asdict(self)
        if not timeline:
            d.pop("timeline")
        return d

    def timeline_csv(self) -> str:
        rows = ["block,tile,load,sort_start,sort_end,raster_start,raster_end"]
        rows += [",".join(str(v) for v in r) for r in self.timeline]
        return "\n".join(rows) + "\n"


def morton_encode(tx: int, ty: int) -> int:
    """Interleave bits: x in even positions (bit 0 = x0), y in odd positions."""
    if not (0 <= tx < 1 << 16 and 0 <= ty < 1 << 16):
        raise ValueError("tile coordinates must be in [0, 2**16)")

    def spread(v: int) -> int:
        v = (v | (v << 8)) & 0x00FF00FF
        v = (v | (v << 4)) & 0x0F0F0F0F
        v = (v | (v << 2)) & 0x33333333
        v = (v | (v << 1)) & 0x55555555
        return v

    return spread(tx) | (spread(ty) << 1)


def estimate_tile_load(plan, pairs) -> np.ndarray:
    """Pair count per tile after depth culling; interpolated tiles cost nothing."""
    from .viewtrans import INTERPOLATE

    load = pairs.tile_counts().astype(np.int64)
    load[plan.status == INTERPOLATE] = 0
    plan.load = load
    return load


def order_within_block(tiles, loads, tiles_x: int):
    """Light to heavy; equal loads keep Morton order."""
    return sorted(tiles, key=lambda t: (loads[t], morton_encode(t % tiles_x, t // tiles_x)))


def assign_blocks(tiles, loads, cfg: SchedulerConfig, tiles_x: int) -> BlockAssignment:
    """Distribute ``tiles`` (ids) with per-tile ``loads`` over ``cfg.num_blocks`` blocks."""
    tiles = [int(t) for t in tiles]
    if not tiles:
        raise ValueError("nothing to schedule")
    loads = {t: int(loads[t]) for t in tiles}
    nb = cfg.num_blocks
    blocks: list[list[int]] = [[] for _ in range(nb)]
    if cfg.policy == "naive_round_robin":
        for i, t in enumerate(sorted(tiles)):
            blocks[i % nb].append(t)
        out = BlockAssignment(blocks, loads)
    else:
        morton = sorted(tiles, key=lambda t: morton_encode(t % tiles_x, t // tiles_x))
        avg = sum(loads.values()) / nb
        per_block = math.ceil(len(tiles) / nb)
        cap = (1.0 + 1.0 / per_block) * avg
        b = 0
        cum = 0
        for t in morton:
            # First tile of a block is always admitted; the last block takes the rest.
            # Reaching the cap exactly also closes the block.
            if blocks[b] and b < nb - 1 and cum + loads[t] >= cap:
                b += 1
                cum = 0
            blocks[b].append(t)
            cum += loads[t]
        out = BlockAssignment(blocks, loads, cap)
    if cfg.order == "light_to_heavy":
        out.blocks = [order_within_block(bl, loads, tiles_x) for bl in out.blocks]
    return out


def simulate_pipeline(assignment: BlockAssignment, cfg: SchedulerConfig) -> UtilizationReport:
    """One sorter feeding one rasterizer per block, tiles in block order."""
    per_block = []
    timeline = []
    for bi, tiles in enumerate(assignment.blocks):
        sort_free = 0.0
        raster_free = 0.0
        bubble = 0.0
        busy = 0.0
        for t in tiles:
            load = assignment.loads[t]
            s0 = sort_free
            sort_free = s0 + cfg.sort_cost * load
            start = max(raster_free, sort_free)
            bubble += start - raster_free
            dur = cfg.raster_cost * load
            timeline.append((bi, t, load, s0, sort_free, start, start + dur))
            raster_free = start + dur
            busy += dur
        per_block.append({"block": bi, "tiles": len(tiles), "load": int(sum(assignment.loads[t] for t in tiles)),
                          "busy": busy, "finish": raster_free, "bubble": bubble})
    makespan = max((b["finish"] for b in per_block), default=0.0)
    for b in per_block:
        b["idle"] = makespan - b["finish"]
    total_busy = sum(b["busy"] for b in per_block)
    nb = len(assignment.blocks)
    util = total_busy / (nb * makespan) if makespan > 0 else 1.0
    return UtilizationReport(
        cfg.policy, nb, makespan, util,
        sum(b["bubble"] for b in per_block), sum(b["idle"] for b in per_block),
        per_block, timeline)


def schedule(tiles, loads, cfg: SchedulerConfig, tiles_x: int) -> UtilizationReport:
    return simulate_pipeline(assign_blocks(tiles, loads, cfg, tiles_x), cfg)


def zipf_workloads(rng: np.random.Generator, tiles_x: int = 16, tiles_y: int = 16,
                   exponent: float = 0.5, peak: int = 2000, hotspots: int = 2) -> np.ndarray:
    """Synthetic per-tile pair counts with a Zipf rank profile.

    Loads ``peak / rank**exponent`` are assigned so that the heaviest ranks sit
    around a few random hotspots, which mimics objects concentrating splats.
    """
    n = tiles_x * tiles_y
    ranks = np.arange(1, n + 1)
    values = np.maximum(1, np.round(peak / ranks ** exponent)).astype(np.int64)
    yy, xx = np.divmod(np.arange(n), tiles_x)
    field_ = np.zeros(n)
    for _ in range(hotspots):
        cx, cy = rng.uniform(0, tiles_x), rng.uniform(0, tiles_y)
        sigma = rng.uniform(0.15, 0.35) * max(tiles_x, tiles_y)
        field_ += np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))
    field_ += rng.uniform(0, 0.05, n)
    loads = np.empty(n, dtype=np.int64)
    loads[np.argsort(-field_, kind="stable")] = values
    return loads
