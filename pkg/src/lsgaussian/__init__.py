"""Streaming Gaussian-splat rendering with tile warping, depth-bound culling
and load-balanced tile scheduling."""

from .metrics import QualityReport, WorkloadCounters, psnr, ssim, workload_report
from .preprocess import RenderConfig, TileGrid, project_set
from .rasterizer import FrameBuffers, brute_force_reference, render_frame_full
from .scene import (
    CameraPose, GaussianSet, Trajectory, generate_synthetic_scene, interpolate_trajectory,
    load_ply, look_at, write_ply,
)
from .scheduler import SchedulerConfig, schedule
from .stream import run_stream, stream_frames
from .viewtrans import TilePlan, WarpConfig, warp_frame

__version__ = "0.1.0"

__all__ = [
    "CameraPose", "FrameBuffers", "GaussianSet", "QualityReport", "RenderConfig",
    "SchedulerConfig", "TileGrid", "TilePlan", "Trajectory", "WarpConfig", "WorkloadCounters",
    "brute_force_reference", "generate_synthetic_scene", "interpolate_trajectory", "load_ply",
    "look_at", "project_set", "psnr", "render_frame_full", "run_stream", "schedule", "ssim",
    "stream_frames", "warp_frame", "workload_report", "write_ply",
]
