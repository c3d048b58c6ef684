"""Camera models and the (f, s, T) algebra.

Conventions used everywhere in the package:

* camera looks down +z, image origin top-left, y axis pointing down;
* pixel (i, j) has its center at (j + 0.5, i + 0.5);
* focal lengths are stored in pixels; NDC coordinates are
  ``x_ndc = 2 (u - cx) / h`` (see :func:`ndc_screen_convert`).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
import math

import numpy as np

from .errors import PointBehindCamera

DEPTH_EPS = 1e-6
# HMR-style weak-perspective focal length, pixels.
WEAK_FOCAL = 5000.0
# Fallback focal for 224x224 crops without ground truth.
DEFAULT_FOCAL = 1000.0
TZ_MAX = 10.0


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.f > 0 and math.isfinite(self.f)):
            raise ValueError(f"focal length must be positive, got {self.f}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def centered(cls, f: float, width: int, height: int | None = None) -> "CameraIntrinsics":
        height = width if height is None else height
        return cls(float(f), width / 2.0, height / 2.0, int(width), int(height))

    def matrix(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]])

    def with_focal(self, f: float) -> "CameraIntrinsics":
        return CameraIntrinsics(float(f), self.cx, self.cy, self.width, self.height)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["f"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class WeakPerspective:
    s: float
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.s, self.tx, self.ty)):
            raise ValueError("weak-perspective parameters must be finite")
        if self.s <= 0:
            raise ValueError(f"weak-perspective scale must be positive, got {self.s}")

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.tx, self.ty], dtype=float)

    @classmethod
    def from_array(cls, a) -> "WeakPerspective":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WeakPerspective":
        return cls(float(d["s"]), float(d["tx"]), float(d["ty"]))


@dataclass(frozen=True)
class Translation:
    Tx: float
    Ty: float
    Tz: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.Tx, self.Ty, self.Tz)):
            raise ValueError("translation must be finite")
        if not 0 < self.Tz <= TZ_MAX:
            raise ValueError(f"Tz must lie in (0, {TZ_MAX}] m, got {self.Tz}")

    def as_array(self) -> np.ndarray:
        return np.array([self.Tx, self.Ty, self.Tz], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Translation":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Translation":
        return cls(float(d["Tx"]), float(d["Ty"]), float(d["Tz"]))


@dataclass(frozen=True)
class CropBox:
    """Square crop around the subject, all sizes in full-image pixels."""

    cx: float
    cy: float
    w: float
    h: float
    W: int
    H: int

    def __post_init__(self):
        if min(self.w, self.h, self.W, self.H) <= 0:
            raise ValueError("crop and image sizes must be positive")
        if self.w != self.h:
            raise ValueError("crop must be square (expand before use)")

    @classmethod
    def around(cls, points2d, W: int, H: int, expand: float = 1.2) -> "CropBox":
        """Square box around a 2D point set, scaled by ``expand``."""
        pts = np.asarray(points2d, dtype=float)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        c = (lo + hi) / 2.0
        side = float(max(hi - lo) * expand)
        if side <= 0:
            raise ValueError("cannot build a crop around coincident points")
        return cls(float(c[0]), float(c[1]), side, side, int(W), int(H))

    def to_crop(self, points2d, resolution: float) -> np.ndarray:
        """Full-image pixels -> pixels of the crop resized to ``resolution``."""
        pts = np.asarray(points2d, dtype=float)
        origin = np.array([self.cx - self.w / 2.0, self.cy - self.h / 2.0])
        return (pts - origin) * (resolution / self.w)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CropBox":
        return cls(float(d["cx"]), float(d["cy"]), float(d["w"]), float(d["h"]), int(d["W"]), int(d["H"]))


def _as_points(points3d) -> np.ndarray:
    pts = np.asarray(points3d, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[-1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
    return pts


def _as_translation(t) -> np.ndarray:
    # Plain arrays are accepted so analyses may go beyond the 10 m range of Translation.
    if isinstance(t, Translation):
        return t.as_array()
    return np.asarray(t, dtype=float).reshape(3)


def camera_depth(points3d, t) -> np.ndarray:
    return _as_points(points3d)[:, 2] + _as_translation(t)[2]


def perspective_project(points3d, t, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of body-frame points offset by ``t``; returns (N, 2) pixels.

    ``t`` is a :class:`Translation` or any length-3 sequence (Tx, Ty, Tz).
    """
    pts = _as_points(points3d)
    T = _as_translation(t)
    depth = pts[:, 2] + T[2]
    if np.any(depth <= DEPTH_EPS):
        bad = int(np.argmax(depth <= DEPTH_EPS))
        raise PointBehindCamera(f"point {bad} has camera depth {depth[bad]:.3g} m")
    u = k.f * (pts[:, 0] + T[0]) / depth + k.cx
    v = k.f * (pts[:, 1] + T[1]) / depth + k.cy
    return np.stack([u, v], axis=-1)


def weak_project(points3d, w: WeakPerspective, k: CameraIntrinsics) -> np.ndarray:
    """Weak-perspective projection; depth is discarded.

    Identical to ``perspective_project`` with focal ``WEAK_FOCAL`` and
    translation ``(tx, ty, 2 WEAK_FOCAL / (s h))`` applied to z-flattened points.
    """
    pts = _as_points(points3d)
    a = w.s * k.height / 2.0
    u = a * (pts[:, 0] + w.tx) + k.cx
    v = a * (pts[:, 1] + w.ty) + k.cy
    return np.stack([u, v], axis=-1)


def weak_translation(w: WeakPerspective, h: float, f_weak: float = WEAK_FOCAL) -> np.ndarray:
    """The translation the weak camera is equivalent to under focal ``f_weak``."""
    return np.array([w.tx, w.ty, 2.0 * f_weak / (w.s * h)])


def focal_from_weak(s: float, h: float, Tz: float) -> float:
    return s * h * Tz / 2.0


def tz_from_focal(f: float, h: float, s: float) -> float:
    return 2.0 * f / (h * s)


def crop_to_full_translation(w: WeakPerspective, box: CropBox) -> tuple[float, float]:
    """Map crop-space weak offsets to full-image translation (Tx, Ty)."""
    Tx = w.tx + (2.0 * box.cx - box.W) / (box.w * w.s)
    Ty = w.ty + (2.0 * box.cy - box.H) / (box.h * w.s)
    return Tx, Ty


def ndc_screen_convert(points, k: CameraIntrinsics, direction: str = "to_ndc") -> np.ndarray:
    """Convert 2D points between screen pixels and NDC (``2 (u - c) / h``)."""
    pts = np.asarray(points, dtype=float)
    c = np.array([k.cx, k.cy])
    half = k.height / 2.0
    if direction == "to_ndc":
        return (pts - c) / half
    if direction == "to_screen":
        return pts * half + c
    raise ValueError(f"unknown direction {direction!r}")


def fov_degrees(f_pixels: float, size_pixels: float) -> float:
    return math.degrees(2.0 * math.atan(size_pixels / (2.0 * f_pixels)))
