"""Random camera/scene sampling, synthetic dataset generation and dolly-zoom analysis."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import json
import math
from pathlib import Path

import numpy as np

from . import io as fio
from .body import ArticulatedBody, build_default_body, pose_body, random_pose, regress_joints
from .errors import DegenerateBody, PointBehindCamera
from .fit import lstsq_weak
from .geometry import (
    CameraIntrinsics,
    CropBox,
    Translation,
    camera_depth,
    fov_degrees,
    perspective_project,
    weak_project,
)
from .metrics import PDHUMAN_THRESHOLDS, assign_protocol
from .raster import max_distortion_scale, render_body

DOLLY_SWEEP = (0.5, 0.75, 1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 20.0)
_DOWN = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class CameraSampleConfig:
    focal_mm: tuple = (7.0, 102.0)
    sensor_mm: float = 24.0
    fov_deg: tuple = (10.0, 140.0)
    distance_m: tuple = (0.5, 10.0)
    elevation_deg: tuple = (-30.0, 30.0)
    azimuth_deg: tuple = (-180.0, 180.0)
    image_size: int = 512
    seed: int = 0
    # minimum camera depth (m) any body vertex may have in a generated scene
    near_clip: float = 0.05
    max_pose_angle_deg: float = 25.0

    def __post_init__(self):
        for name in ("focal_mm", "fov_deg", "distance_m", "elevation_deg", "azimuth_deg"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name}: empty range [{lo}, {hi}]")
        if self.focal_mm[0] <= 0 or self.distance_m[0] <= 0 or self.sensor_mm <= 0:
            raise ValueError("focal, distance and sensor size must be positive")
        fovs = [math.degrees(2 * math.atan(self.sensor_mm / (2 * f))) for f in self.focal_mm]
        if min(fovs) < self.fov_deg[0] or max(fovs) > self.fov_deg[1]:
            raise ValueError(f"focal range maps to FoV {min(fovs):.1f}-{max(fovs):.1f} deg, "
                             f"outside {self.fov_deg}")

    @classmethod
    def from_dict(cls, d: dict) -> "CameraSampleConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sampler settings: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True, eq=False)
class SceneSample:
    intrinsics: CameraIntrinsics
    rotation: np.ndarray  # world -> camera
    camera_position: np.ndarray
    center: np.ndarray
    pose_seed: int
    distance: float
    focal_mm: float
    elevation_deg: float
    azimuth_deg: float

    @property
    def fov_deg(self) -> float:
        return fov_degrees(self.intrinsics.f, self.intrinsics.height)

    def to_camera(self, points_world) -> np.ndarray:
        return (np.asarray(points_world, float) - self.camera_position) @ self.rotation.T


def look_at(camera_position, target) -> np.ndarray:
    """World-to-camera rotation for a camera at ``camera_position`` facing ``target`` (y down)."""
    forward = np.asarray(target, float) - np.asarray(camera_position, float)
    forward /= np.linalg.norm(forward)
    right = np.cross(_DOWN, forward)
    n = np.linalg.norm(right)
    if n < 1e-12:
        right = np.array([1.0, 0.0, 0.0])
    else:
        right /= n
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def sample_scene(config: CameraSampleConfig, rng: np.random.Generator,
                 center=(0.0, 0.0, 0.0)) -> SceneSample:
    focal_mm = rng.uniform(*config.focal_mm)
    distance = rng.uniform(*config.distance_m)
    elev = rng.uniform(*config.elevation_deg)
    azim = rng.uniform(*config.azimuth_deg)
    pose_seed = int(rng.integers(0, 2**31 - 1))

    size = config.image_size
    k = CameraIntrinsics.centered(focal_mm / config.sensor_mm * size, size)
    e, a = math.radians(elev), math.radians(azim)
    center = np.asarray(center, float)
    # the subject faces -z; elevation raises the camera (toward -y)
    offset = distance * np.array([math.cos(e) * math.sin(a), -math.sin(e), -math.cos(e) * math.cos(a)])
    position = center + offset
    return SceneSample(k, look_at(position, center), position, center, pose_seed,
                       float(distance), float(focal_mm), float(elev), float(azim))


def scene_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, index) so parallel and serial runs agree."""
    return np.random.default_rng([int(seed), int(index)])


@dataclass
class GeneratedScene:
    sample: SceneSample
    translation: Translation
    vertices: np.ndarray  # camera-aligned, pelvis-relative
    joints3d: np.ndarray
    joints2d: np.ndarray
    buffers: object
    tau: float
    protocol: int
    box: CropBox
    attempts: int

    def meta(self, sample_id: str, index: int) -> dict:
        s = self.sample
        return {
            "id": sample_id,
            "index": index,
            "attempts": self.attempts,
            "intrinsics": s.intrinsics.to_dict(),
            "translation": self.translation.to_dict(),
            "rotation": s.rotation.tolist(),
            "camera_position": s.camera_position.tolist(),
            "distance": s.distance,
            "focal_mm": s.focal_mm,
            "fov_deg": s.fov_deg,
            "elevation_deg": s.elevation_deg,
            "azimuth_deg": s.azimuth_deg,
            "pose_seed": s.pose_seed,
            "tau": self.tau,
            "protocol": self.protocol,
            "bbox": self.box.to_dict(),
            "joints3d": self.joints3d.tolist(),
            "joints2d": self.joints2d.tolist(),
            "vertices": self.vertices.tolist(),
        }


def make_scene(config: CameraSampleConfig, index: int, body: ArticulatedBody | None = None,
               max_attempts: int = 100) -> GeneratedScene:
    """Draw scenes from the (seed, index) stream until the body clears the near plane."""
    body = body or build_default_body()
    rng = scene_rng(config.seed, index)
    for attempt in range(1, max_attempts + 1):
        sample = sample_scene(config, rng)
        pose = random_pose(np.random.default_rng(sample.pose_seed), body.n_joints,
                           config.max_pose_angle_deg)
        world = pose_body(body, pose)
        pelvis = regress_joints(body.regressor, world)[0]
        # body placed so its pelvis sits on the sphere center
        world = world - pelvis + sample.center
        cam = sample.to_camera(world)
        T = sample.to_camera(sample.center[None, :])[0]
        verts = cam - T
        if camera_depth(verts, T).min() <= config.near_clip:
            continue
        translation = Translation.from_array(T)
        joints3d = regress_joints(body.regressor, verts)
        joints2d = perspective_project(joints3d, translation, sample.intrinsics)
        buffers = render_body(body, verts, translation, sample.intrinsics)
        tau = max_distortion_scale(buffers)
        box = CropBox.around(joints2d, sample.intrinsics.width, sample.intrinsics.height)
        return GeneratedScene(sample, translation, verts, joints3d, joints2d, buffers, tau,
                              assign_protocol(tau, PDHUMAN_THRESHOLDS), box, attempt)
    raise PointBehindCamera(f"scene {index}: no valid placement in {max_attempts} attempts")


def scene_id(index: int) -> str:
    return f"{index:04d}"


def generate_dataset(config: CameraSampleConfig, n: int, out_dir, body: ArticulatedBody | None = None,
                     threads: int = 1) -> dict:
    """Write ``n`` scenes under ``out_dir/scenes/NNNN/`` plus ``out_dir/index.json``."""
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    body = body or build_default_body()

    def work(i):
        scene = make_scene(config, i, body)
        sid = scene_id(i)
        d = out / "scenes" / sid
        fio.write_buffers(d, scene.buffers)
        fio.write_json(d / "meta.json", scene.meta(sid, i))
        return {"id": sid, "tau": scene.tau, "protocol": scene.protocol, "distance": scene.sample.distance}

    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(work, range(n)))
    else:
        entries = [work(i) for i in range(n)]
    index = {"count": n, "config": config.to_dict(), "scenes": entries}
    fio.write_json(out / "index.json", index)
    return index


@dataclass
class DollyResult:
    Tz: float
    tau: float
    error_px: float
    focal: float
    weak: object = field(repr=False, default=None)


def dolly_zoom_error(joints3d, Tz: float, h: int = 224, fill: float = 0.8) -> DollyResult:
    """Weak vs. perspective re-projection error when the camera sits ``Tz`` from the pelvis.

    The focal length follows the dolly zoom: it grows with Tz so the body's
    joint extent spans ``fill`` of the image height. The weak camera is fitted
    to the perspective projection by least squares; the error is the mean
    per-joint pixel distance between the two projections.
    """
    if Tz <= 0:
        raise ValueError(f"Tz must be positive, got {Tz}")
    J = np.asarray(joints3d, float)
    J = J - J[0]
    extent = float(np.ptp(J[:, :2], axis=0).max()) if len(J) else 0.0
    if len(J) < 2 or extent <= 0:
        raise DegenerateBody("joints have no spatial extent")
    f = Tz * h * fill / extent
    k = CameraIntrinsics.centered(f, h)
    persp = perspective_project(J, (0.0, 0.0, Tz), k)
    weak = lstsq_weak(J, persp, k)
    err = float(np.linalg.norm(weak_project(J, weak, k) - persp, axis=1).mean())
    tau = float(np.max(Tz / (J[:, 2] + Tz)))
    return DollyResult(float(Tz), tau, err, f, weak)


def dolly_sweep(joints3d, tz_values=DOLLY_SWEEP, h: int = 224) -> list:
    return [dolly_zoom_error(joints3d, tz, h) for tz in tz_values]


def config_from_json(path) -> CameraSampleConfig:
    cfg = fio.read_json(path)
    return CameraSampleConfig.from_dict(cfg.get("sampler", cfg))


def dumps_config(config: CameraSampleConfig) -> str:
    return json.dumps(config.to_dict(), indent=2)
