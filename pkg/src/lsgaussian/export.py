"""Frame and depth-map writers."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def to_bytes(color: np.ndarray) -> np.ndarray:
    """Quantise a float RGB image in [0, 1] to uint8 (round half to even)."""
    return np.round(np.clip(color, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, color: np.ndarray) -> None:
    img = to_bytes(color)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file written by :func:`write_ppm`; returns uint8 (H, W, 3)."""
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 image")
    w, h = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return pixels.reshape(h, w, 3)


def write_png(path, color: np.ndarray) -> None:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - optional extra
        raise RuntimeError("PNG output needs Pillow (pip install lsgaussian[png])") from exc
    Image.fromarray(to_bytes(color), "RGB").save(path)


def write_depth(path, depth: np.ndarray) -> Path:
    """Write little-endian float32 raw data plus ``<path>.json`` with the shape.

    Pixels without depth are stored as NaN.
    """
    path = Path(path)
    d = np.ascontiguousarray(depth, dtype="<f4")
    path.write_bytes(d.tobytes())
    header = path.with_name(path.name + ".json")
    header.write_text(json.dumps({"width": int(d.shape[1]), "height": int(d.shape[0]),
                                  "type": "float32"}))
    return header


def read_depth(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    if meta.get("type") != "float32":
        raise ValueError(f"unsupported depth type {meta.get('type')!r}")
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    return raw.reshape(meta["height"], meta["width"])
