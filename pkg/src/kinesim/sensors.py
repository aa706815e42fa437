"""Ray-cast laser scans and depth images attached to robot link frames.

Sensor frames follow the URDF link convention: x forward, y left, z up. Image
pixel (u, v) has u to the right and v down; the ray through it is
``(1, -(u - cx) / fx, -(v - cy) / fy)`` in the camera frame, with the principal
point at the image centre so intrinsics scale linearly with resolution.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidParamsError, UnknownEntityError

RESOLUTIONS = {(160, 120), (320, 240), (640, 480)}
LASER_DEFAULTS = {"rays": 15, "fov_deg": 60.0, "max_range": 3.0}
CAMERA_DEFAULTS = {"hfov_deg": 58.0, "near": 0.3, "far": 8.0}


def _json_float(v: float):
    return None if not math.isfinite(v) else float(v)


@dataclass
class LaserScan:
    frame: str
    angles: np.ndarray
    ranges: np.ndarray  # +inf marks a miss
    max_range: float
    timestamp: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "angles": [float(a) for a in self.angles],
            "ranges": [_json_float(r) for r in self.ranges],
            "max_range": self.max_range,
            "timestamp": self.timestamp,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class DepthImage:
    width: int
    height: int
    intrinsics: tuple  # fx, fy, cx, cy in pixels
    depth: np.ndarray  # row-major (height * width), meters; misses hold `far`
    near: float
    far: float
    timestamp: float
    frame: str = ""

    def as_array(self) -> np.ndarray:
        return self.depth.reshape(self.height, self.width)

    @property
    def valid(self) -> np.ndarray:
        return self.depth < self.far

    def header(self) -> dict:
        fx, fy, cx, cy = self.intrinsics
        return {
            "width": self.width,
            "height": self.height,
            "intrinsics": {"fx": fx, "fy": fy, "cx": cx, "cy": cy},
            "near": self.near,
            "far": self.far,
            "timestamp": self.timestamp,
            "frame": self.frame,
            "units": "millimeters",
            "convention": "z-depth along the optical axis; 0 = no return",
        }

    def to_dict(self) -> dict:
        """JSON form; pixels without a return are null."""
        out = self.header()
        out["units"] = "meters"
        out["depth"] = [None if not ok else float(d) for d, ok in zip(self.depth, self.valid)]
        return out

    def write_pgm(self, path) -> Path:
        """16-bit binary PGM in millimeters plus a ``.json`` header sidecar."""
        path = Path(path)
        mm = np.where(self.valid, np.rint(self.depth * 1000.0), 0).astype(">u2")
        with open(path, "wb") as fh:
            fh.write(f"P5\n{self.width} {self.height}\n65535\n".encode("ascii"))
            fh.write(mm.tobytes())
        path.with_suffix(".json").write_text(json.dumps(self.header(), indent=2) + "\n")
        return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[4], dtype=dtype, count=w * h).reshape(h, w)


def _sensor_config(model, kind: str, sensor_id: str, defaults: dict) -> dict:
    table = model.config.lasers if kind == "laser" else model.config.cameras
    if sensor_id not in table:
        raise UnknownEntityError(f"unknown {kind} {sensor_id!r} on model {model.name!r}")
    cfg = {**defaults, **table[sensor_id]}
    if cfg.get("frame") not in model.link_map:
        raise UnknownEntityError(f"{kind} {sensor_id!r} frame {cfg.get('frame')!r} is not a model link")
    return cfg


def laser_angles(rays: int, fov_deg: float) -> np.ndarray:
    half = math.radians(fov_deg) / 2.0
    return np.linspace(-half, half, rays) if rays > 1 else np.zeros(1)


def get_laser_scan(instance, robot_id: int, laser_id: str) -> LaserScan:
    """One ray per fan angle from the laser frame origin, ignoring the robot's own links."""
    with instance.lock:
        model = instance.robot_model(robot_id)
        cfg = _sensor_config(model, "laser", laser_id, LASER_DEFAULTS)
        T = instance.robot_link_transforms(robot_id)[cfg["frame"]]
        world = instance.world_snapshot()
        stamp = instance.clock
    angles = laser_angles(int(cfg["rays"]), float(cfg["fov_deg"]))
    local = np.column_stack((np.cos(angles), np.sin(angles), np.zeros_like(angles)))
    D = local @ T[:3, :3].T
    O = np.broadcast_to(T[:3, 3], D.shape)
    ranges, _ = world.cast_rays(O, D, float(cfg["max_range"]), exclude_owner=robot_id)
    # ray count and fan width are stand-ins, not measured hardware values
    meta = {"laser": laser_id, "rays": int(cfg["rays"]), "fov_deg": float(cfg["fov_deg"]),
            "geometry": "placeholder"}
    return LaserScan(cfg["frame"], angles, ranges, float(cfg["max_range"]), stamp, meta)


def parse_resolution(resolution) -> tuple[int, int]:
    if isinstance(resolution, str):
        try:
            w, h = (int(v) for v in resolution.lower().split("x"))
        except ValueError:
            raise InvalidParamsError(f"bad resolution {resolution!r}") from None
    else:
        w, h = (int(v) for v in resolution)
    if (w, h) not in RESOLUTIONS:
        raise InvalidParamsError(f"unsupported resolution {w}x{h}; choose from "
                                 + ", ".join(f"{a}x{b}" for a, b in sorted(RESOLUTIONS)))
    return w, h


def camera_intrinsics(width: int, height: int, hfov_deg: float) -> tuple:
    fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
    return fx, fx, width / 2.0, height / 2.0


def pixel_rays(width: int, height: int, intrinsics) -> np.ndarray:
    """Unnormalized camera-frame rays (H*W, 3) with unit forward component."""
    fx, fy, cx, cy = intrinsics
    v, u = np.mgrid[0:height, 0:width]
    k = np.empty((height * width, 3))
    k[:, 0] = 1.0
    k[:, 1] = -(u.reshape(-1) - cx) / fx
    k[:, 2] = -(v.reshape(-1) - cy) / fy
    return k


def get_depth_image(instance, robot_id: int, camera_id: str, resolution=(320, 240)) -> DepthImage:
    width, height = parse_resolution(resolution)
    with instance.lock:
        model = instance.robot_model(robot_id)
        cfg = _sensor_config(model, "camera", camera_id, CAMERA_DEFAULTS)
        T = instance.robot_link_transforms(robot_id)[cfg["frame"]]
        world = instance.world_snapshot()
        stamp = instance.clock
    near, far = float(cfg["near"]), float(cfg["far"])
    K = camera_intrinsics(width, height, float(cfg["hfov_deg"]))
    k = pixel_rays(width, height, K)
    norms = np.linalg.norm(k, axis=1)
    D = (k / norms[:, None]) @ T[:3, :3].T
    O = np.broadcast_to(T[:3, 3], D.shape)
    t, _ = world.cast_rays(O, D, far * float(norms.max()), exclude_owner=robot_id)
    depth = t / norms
    depth = np.where(np.isfinite(depth) & (depth >= near) & (depth <= far), depth, far)
    return DepthImage(width, height, K, depth, near, far, stamp, cfg["frame"])
