"""Scene primitives, PLY ingestion, SH color evaluation and camera trajectories."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

TILE = 16
SH_COEFFS = 48

# Real spherical-harmonic normalisation constants (Condon-Shortley phase kept),
# matching the layout used by trained 3DGS checkpoints.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

PLY_PROPERTIES = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    """Base class for scene file problems."""


class PlyParseError(PlyError):
    pass


class PlySchemaError(PlyError):
    pass


class PlyValueError(PlyError):
    pass


@dataclass(frozen=True)
class Gaussian3D:
    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # (w, x, y, z)
    opacity: float
    sh: np.ndarray  # 48 values: 3 DC then 45 rest, PLY order


@dataclass
class GaussianSet:
    """Struct-of-arrays container; the row index is the persistent Gaussian id."""

    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    sh: np.ndarray
    sh_degree: int = 0

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(n, SH_COEFFS)
        if not 0 <= self.sh_degree <= 3:
            raise ValueError(f"sh_degree must be in [0, 3], got {self.sh_degree}")

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(self.positions[i], self.scales[i], self.rotations[i],
                          float(self.opacities[i]), self.sh[i])

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "GaussianSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)),
                   np.zeros(0), np.zeros((0, SH_COEFFS)), sh_degree)

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian3D], sh_degree: int = 0) -> "GaussianSet":
        if not gaussians:
            return cls.empty(sh_degree)
        return cls(
            np.array([g.position for g in gaussians]),
            np.array([g.scale for g in gaussians]),
            np.array([g.rotation for g in gaussians]),
            np.array([g.opacity for g in gaussians]),
            np.array([g.sh for g in gaussians]),
            sh_degree,
        )

    @classmethod
    def concat(cls, sets: Sequence["GaussianSet"]) -> "GaussianSet":
        return cls(
            np.concatenate([s.positions for s in sets]),
            np.concatenate([s.scales for s in sets]),
            np.concatenate([s.rotations for s in sets]),
            np.concatenate([s.opacities for s in sets]),
            np.concatenate([s.sh for s in sets]),
            max(s.sh_degree for s in sets),
        )


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray  # world -> camera, 3x3
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.2

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")
        if self.width <= 0 or self.height <= 0 or self.width % TILE or self.height % TILE:
            raise ValueError(f"image size {self.width}x{self.height} must be positive multiples of {TILE}")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def tiles_x(self) -> int:
        return self.width // TILE

    @property
    def tiles_y(self) -> int:
        return self.height // TILE

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation

    def with_extrinsics(self, rotation: np.ndarray, translation: np.ndarray) -> "CameraPose":
        return CameraPose(rotation, translation, self.fx, self.fy, self.cx, self.cy,
                          self.width, self.height, self.near)

    def to_dict(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
            "fx": float(self.fx), "fy": float(self.fy),
            "cx": float(self.cx), "cy": float(self.cy),
            "width": int(self.width), "height": int(self.height),
            "near": float(self.near),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        # Pad to the tile grid; the principal point stays put so the original
        # pixels keep their coordinates.
        width = -(-int(d["width"]) // TILE) * TILE
        height = -(-int(d["height"]) // TILE) * TILE
        rot = np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3)
        # Re-orthonormalise rotations that were serialised with limited precision.
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
        return cls(rot, d["translation"], float(d["fx"]), float(d["fy"]),
                   float(d["cx"]), float(d["cy"]), width, height,
                   float(d.get("near", 0.2)))


def look_at(eye, target, up=(0.0, -1.0, 0.0), *, width=256, height=256,
            fov_deg=60.0, near=0.2) -> CameraPose:
    """Build a pose for a camera at ``eye`` looking at ``target``.

    Camera axes follow the usual vision convention: +x right, +y down, +z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
    return CameraPose(rot, -rot @ eye, f, f, width / 2, height / 2, width, height, near)


# --------------------------------------------------------------------------- PLY

def _parse_header(fh, path) -> tuple[int, list[tuple[str, str]], int]:
    first = fh.readline()
    if first.strip() != b"ply":
        raise PlyParseError(f"{path}: line 1: expected 'ply', got {first.strip()!r}")
    lineno = 1
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    fmt_seen = False
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise PlyParseError(f"{path}: line {lineno}: unexpected end of file before end_header")
        line = raw.decode("ascii", errors="replace").strip()
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "format":
            if len(parts) != 3 or parts[1] != "binary_little_endian" or parts[2] != "1.0":
                raise PlyParseError(f"{path}: line {lineno}: unsupported format {line!r}")
            fmt_seen = True
        elif key == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise PlyParseError(f"{path}: line {lineno}: malformed element {line!r}")
            if parts[1] == "vertex":
                if count is not None:
                    raise PlyParseError(f"{path}: line {lineno}: duplicate vertex element")
                count = int(parts[2])
                in_vertex = True
            else:
                if int(parts[2]) != 0:
                    raise PlyParseError(f"{path}: line {lineno}: unsupported element {parts[1]!r}")
                in_vertex = False
        elif key == "property":
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise PlyParseError(f"{path}: line {lineno}: malformed property {line!r}")
            if in_vertex:
                props.append((parts[2], _PLY_TYPES[parts[1]]))
        elif key == "end_header":
            break
        else:
            raise PlyParseError(f"{path}: line {lineno}: unrecognised header line {line!r}")
    if not fmt_seen:
        raise PlyParseError(f"{path}: line {lineno}: header has no format line")
    if count is None:
        raise PlyParseError(f"{path}: line {lineno}: header declares no vertex element")
    return count, props, lineno


def load_ply(path) -> GaussianSet:
    """Read a binary little-endian 3DGS checkpoint and apply the activations."""
    path = Path(path)
    with open(path, "rb") as fh:
        count, props, _ = _parse_header(fh, path)
        names = [p[0] for p in props]
        missing = [p for p in PLY_PROPERTIES if p not in names]
        wrong = [n for n, t in props if n in PLY_PROPERTIES and t != "f4"]
        if missing or wrong:
            raise PlySchemaError(
                f"{path}: vertex properties missing {missing} or not float32 {wrong}; "
                f"expected float32 properties: {' '.join(PLY_PROPERTIES)}")
        dtype = np.dtype([(n, "<" + t) for n, t in props])
        body = fh.read(dtype.itemsize * count)
    if len(body) != dtype.itemsize * count:
        raise PlyParseError(f"{path}: expected {count} vertices, file holds {len(body) // dtype.itemsize}")
    data = np.frombuffer(body, dtype=dtype)

    def cols(names):
        return np.stack([data[n].astype(np.float64) for n in names], axis=1) if count else np.zeros((0, len(names)))

    positions = cols(["x", "y", "z"])
    sh = cols([f"f_dc_{i}" for i in range(3)] + [f"f_rest_{i}" for i in range(45)])
    opacity_logit = cols(["opacity"])[:, 0]
    log_scales = cols([f"scale_{i}" for i in range(3)])
    quats = cols([f"rot_{i}" for i in range(4)])

    stacked = np.concatenate([positions, sh, opacity_logit[:, None], log_scales, quats], axis=1)
    bad = np.flatnonzero(~np.isfinite(stacked).all(axis=1))
    if bad.size:
        raise PlyValueError(f"{path}: non-finite value in vertex {int(bad[0])}")
    norms = np.linalg.norm(quats, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise PlyValueError(f"{path}: zero quaternion in vertex {int(zero[0])}")

    rest_nonzero = np.abs(sh[:, 3:]).reshape(-1, 3, 15).max(axis=(0, 1)) if count else np.zeros(15)
    degree = 0
    for d, lo, hi in ((1, 0, 3), (2, 3, 8), (3, 8, 15)):
        if np.any(rest_nonzero[lo:hi] != 0):
            degree = d
    return GaussianSet(
        positions,
        np.exp(log_scales),
        quats / norms[:, None],
        1.0 / (1.0 + np.exp(-opacity_logit)),
        sh,
        degree,
    )


def write_ply(gset: GaussianSet, path) -> None:
    """Write ``gset`` in the layout read by :func:`load_ply` (inverse activations)."""
    n = len(gset)
    dtype = np.dtype([(p, "<f4") for p in PLY_PROPERTIES])
    rec = np.zeros(n, dtype=dtype)
    for i, ax in enumerate("xyz"):
        rec[ax] = gset.positions[:, i]
    for i in range(48):
        name = f"f_dc_{i}" if i < 3 else f"f_rest_{i - 3}"
        rec[name] = gset.sh[:, i]
    op = np.clip(gset.opacities, 1e-7, 1 - 1e-7)
    rec["opacity"] = np.log(op / (1 - op))
    for i in range(3):
        rec[f"scale_{i}"] = np.log(gset.scales[:, i])
        rec[f"rot_{i}"] = gset.rotations[:, i]
    rec["rot_3"] = gset.rotations[:, 3]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in PLY_PROPERTIES]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


# --------------------------------------------------------------------------- SH

def sh_coefficients(sh: np.ndarray) -> np.ndarray:
    """Reshape PLY-ordered (..., 48) coefficients to (..., 16, 3)."""
    sh = np.asarray(sh, dtype=np.float64)
    dc = sh[..., :3]
    rest = sh[..., 3:].reshape(sh.shape[:-1] + (3, 15))
    return np.concatenate([dc[..., None, :], np.swapaxes(rest, -1, -2)], axis=-2)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values for unit directions, shape (..., (degree+1)**2)."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full_like(x, SH_C0)]
    if degree > 0:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        out += [SH_C2[0] * x * y, SH_C2[1] * y * z, SH_C2[2] * (2 * zz - xx - yy),
                SH_C2[3] * x * z, SH_C2[4] * (xx - yy)]
    if degree > 2:
        out += [SH_C3[0] * y * (3 * xx - yy), SH_C3[1] * x * y * z,
                SH_C3[2] * y * (4 * zz - xx - yy), SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
                SH_C3[4] * x * (4 * zz - xx - yy), SH_C3[5] * z * (xx - yy),
                SH_C3[6] * x * (xx - 3 * yy)]
    return np.stack(out, axis=-1)


def sh_to_color(sh, view_dir, degree: int) -> np.ndarray:
    """Evaluate view-dependent color; broadcasts over leading dimensions.

    Result is ``basis . coeffs + 0.5`` clamped to [0, 1] per channel.
    """
    if not isinstance(degree, (int, np.integer)) or not 0 <= degree <= 3:
        raise ValueError(f"SH degree must be an integer in [0, 3], got {degree!r}")
    coeffs = sh_coefficients(sh)[..., : (degree + 1) ** 2, :]
    basis = sh_basis(np.asarray(view_dir, dtype=np.float64), degree)
    rgb = np.einsum("...k,...kc->...c", basis, coeffs) + 0.5
    return np.clip(rgb, 0.0, 1.0)


# --------------------------------------------------------------------------- synthetic

def generate_synthetic_scene(seed: int, count: int, extent: float = 4.0) -> GaussianSet:
    """Random Gaussians in an axis-aligned cube of side ``extent`` centred at the origin."""
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-extent / 2, extent / 2, size=(count, 3))
    scales = np.exp(rng.uniform(math.log(0.005), math.log(0.1), size=(count, 3))) * extent
    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opacities = rng.uniform(0.2, 1.0, size=count)
    rgb = rng.uniform(0.0, 1.0, size=(count, 3))
    sh = np.zeros((count, SH_COEFFS))
    sh[:, :3] = (rgb - 0.5) / SH_C0
    return GaussianSet(positions, scales, quats, opacities, sh, 0)


# --------------------------------------------------------------------------- trajectories

@dataclass
class Trajectory:
    poses: list[CameraPose]
    fps: float = 90.0
    full_render_period: int = 6
    v_max: float = 1.8
    omega_max: float = 90.0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.poses)

    def to_dict(self) -> dict:
        return {"fps": self.fps, "v_max": self.v_max, "omega_max": self.omega_max,
                "poses": [p.to_dict() for p in self.poses]}


def rotation_angle_deg(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices, degrees."""
    c = (np.trace(ra @ rb.T) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def _steps(amount: float, cap: float) -> int:
    # Tolerate float noise so 1.8 / 0.02 does not round up to 91.
    return int(math.ceil(amount / cap - 1e-9)) if amount > 0 else 0


def interpolate_trajectory(keyposes: Sequence[CameraPose], fps: float = 90.0,
                           v_max: float = 1.8, omega_max: float = 90.0,
                           window: int = 5) -> Trajectory:
    """Densify key poses so that per-frame motion respects the speed caps.

    Camera centres move linearly, orientations by slerp. Each segment uses the
    fewest frames that keep both the translation step (``v_max / fps``) and the
    rotation step (``omega_max / fps`` degrees) under their caps.
    """
    if len(keyposes) < 2:
        raise ValueError("need at least two key poses")
    base = keyposes[0]
    for kp in keyposes[1:]:
        if (kp.fx, kp.fy, kp.cx, kp.cy, kp.width, kp.height) != (base.fx, base.fy, base.cx, base.cy, base.width, base.height):
            raise ValueError("key poses must share intrinsics")
    dt_cap = v_max / fps
    rot_cap = omega_max / fps
    poses: list[CameraPose] = []
    for a, b in zip(keyposes[:-1], keyposes[1:]):
        ca, cb = a.center, b.center
        dist = float(np.linalg.norm(cb - ca))
        ang = rotation_angle_deg(a.rotation, b.rotation)
        k = max(_steps(dist, dt_cap), _steps(ang, rot_cap))
        if k == 0:
            continue
        slerp = Slerp([0.0, 1.0], Rotation.from_matrix(np.stack([a.rotation, b.rotation])))
        for j in range(k):
            s = j / k
            rot = slerp([s]).as_matrix()[0] if ang > 0 else a.rotation
            centre = ca + s * (cb - ca)
            poses.append(a.with_extrinsics(rot, -rot @ centre))
    poses.append(keyposes[-1])
    return Trajectory(poses, fps, window + 1, v_max, omega_max)


def save_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_text(json.dumps(traj.to_dict(), indent=1))


def load_trajectory(path, window: int = 5) -> Trajectory:
    """Load a key-pose file and densify it with the caps it declares."""
    d = json.loads(Path(path).read_text())
    poses = [CameraPose.from_dict(p) for p in d["poses"]]
    fps = float(d.get("fps", 90.0))
    v_max = float(d.get("v_max", 1.8))
    omega = float(d.get("omega_max", 90.0))
    if len(poses) == 1:
        return Trajectory(poses, fps, window + 1, v_max, omega)
    return interpolate_trajectory(poses, fps, v_max, omega, window)


# --------------------------------------------------------------------------- desk-scale presets

def desk_camera(width: int = 256, height: int = 256) -> CameraPose:
    """Camera 3 m from the centre of a 4 m synthetic cube, 60 degree field of view."""
    return look_at((0.0, 0.0, -3.0), (0.0, 0.0, 0.0), width=width, height=height)


def desk_trajectory(steps: int = 6, width: int = 256, height: int = 256,
                    fps: float = 90.0, v_max: float = 1.8, omega_max: float = 90.0,
                    window: int = 5) -> Trajectory:
    """Sideways pan with a slow yaw: ``steps`` frames at full translation speed."""
    start = desk_camera(width, height)
    shift = steps * v_max / fps
    end = look_at((shift, 0.0, -3.0), (shift + 0.3 * shift, 0.0, 0.0), width=width, height=height)
    return interpolate_trajectory([start, end], fps, v_max, omega_max, window)
