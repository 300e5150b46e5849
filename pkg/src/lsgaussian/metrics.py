"""Image quality metrics and workload counters."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import correlate2d

PSNR_CAP = 99.0


def psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; identical images give :data:`PSNR_CAP`."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _luma(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def ssim(a, b, *, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully-contained windows of the luminance images."""
    x, y = _luma(a), _luma(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.ndim != 2 or min(x.shape) < window:
        raise ValueError(f"images must be at least {window}x{window}")
    w = gaussian_window(window, sigma)
    c1, c2 = k1 ** 2, k2 ** 2

    def filt(img):
        return correlate2d(img, w, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class QualityReport:
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    frames: list = field(default_factory=list)

    def add(self, frame: int, ref, img) -> None:
        self.frames.append(frame)
        self.psnr.append(psnr(ref, img))
        self.ssim.append(ssim(ref, img))

    def to_csv(self) -> str:
        rows = ["frame,psnr,ssim"]
        rows += [f"{f},{p:.6f},{s:.6f}" for f, p, s in zip(self.frames, self.psnr, self.ssim)]
        return "\n".join(rows) + "\n"


@dataclass
class WorkloadCounters:
    gaussians_in: int = 0
    culled: int = 0
    degenerate: int = 0
    pairs_by_stage: dict = field(default_factory=dict)
    pairs: int = 0
    pairs_after_dpes: int = 0
    tiles_interpolated: int = 0
    tiles_rerendered: int = 0
    blended_pairs: int = 0
    early_stops: int = 0
    pixels_rendered: int = 0

    def merge(self, other: "WorkloadCounters") -> None:
        for k, v in asdict(other).items():
            if k == "pairs_by_stage":
                for s, n in v.items():
                    self.pairs_by_stage[s] = self.pairs_by_stage.get(s, 0) + n
            else:
                setattr(self, k, getattr(self, k) + v)


def workload_report(*runs: WorkloadCounters) -> dict:
    """Sum counters from one or more frames into a plain JSON-ready dict."""
    total = WorkloadCounters()
    for r in runs:
        total.merge(r)
    out = asdict(total)
    out["pairs_by_stage"] = dict(sorted(out["pairs_by_stage"].items()))
    return out
