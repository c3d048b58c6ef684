"""Hybrid re-projection losses with analytic gradients and explicit routing.

Each loss returns a :class:`LossReport`. Parameter blocks a loss must not
update (the detached inputs) are listed in ``blocked`` and never receive a
gradient entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
import json

import numpy as np

from .errors import ShapeMismatch
from .geometry import (
    CameraIntrinsics,
    Translation,
    WeakPerspective,
    perspective_project,
    weak_project,
)
from .raster import D_J_RANGE

BLOCKS = ("weak", "translation", "joints3d", "vertices")


@dataclass(frozen=True)
class LossWeights:
    iuv: float = 1.0
    distortion: float = 1.0
    tz: float = 1.0
    joints3d: float = 1.0
    joints2d: float = 0.01
    vertices: float = 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown loss weights: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def from_json(cls, path) -> "LossWeights":
        with open(path) as fh:
            cfg = json.load(fh)
        return cls.from_dict(cfg.get("weights", cfg))


@dataclass
class LossReport:
    value: float
    grads: dict = field(default_factory=dict)
    blocked: frozenset = frozenset()

    def grad(self, block: str) -> np.ndarray | None:
        return self.grads.get(block)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "grads": {k: np.asarray(v).tolist() for k, v in sorted(self.grads.items())},
            "blocked": sorted(self.blocked),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _blocked_except(*active: str) -> frozenset:
    return frozenset(b for b in BLOCKS if b not in active)


def _check_pairs(pred, gt, name):
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{name}: prediction {pred.shape} vs target {gt.shape}")


def weak_reproj_loss(joints3d, w: WeakPerspective, joints2d_gt, d_j, k: CameraIntrinsics) -> LossReport:
    """Distortion-weighted L1 weak-perspective re-projection loss.

    ``value = sum_i |proj_i - gt_i|_1 / d_j[i]``. Only the weak camera block
    gets a gradient; the 3D joints are detached.
    """
    J = np.asarray(joints3d, float)
    gt = np.asarray(joints2d_gt, float)
    d = np.asarray(d_j, float).reshape(-1)
    if d.size != len(J):
        raise ShapeMismatch(f"{d.size} distortion weights for {len(J)} joints")
    lo, hi = D_J_RANGE
    if np.any(d < lo) or np.any(d > hi):
        raise ValueError(f"distortion weights must lie in [{lo}, {hi}]")
    pred = weak_project(J, w, k)
    _check_pairs(pred, gt, "weak_reproj_loss")
    r = pred - gt
    inv_d = 1.0 / d
    value = float(np.sum(inv_d[:, None] * np.abs(r)))

    sgn = np.sign(r) * inv_d[:, None]
    half_h = k.height / 2.0
    offset = J[:, :2] + np.array([w.tx, w.ty])
    g_s = half_h * np.sum(sgn * offset)
    g_tx = w.s * half_h * np.sum(sgn[:, 0])
    g_ty = w.s * half_h * np.sum(sgn[:, 1])
    return LossReport(value, {"weak": np.array([g_s, g_tx, g_ty])}, _blocked_except("weak"))


def persp_reproj_loss(joints3d, t: Translation, joints2d_gt, k: CameraIntrinsics) -> LossReport:
    """L1 perspective re-projection loss in full-image pixels.

    Only the 3D joints receive a gradient; the translation is detached.
    """
    J = np.asarray(joints3d, float)
    gt = np.asarray(joints2d_gt, float)
    pred = perspective_project(J, t, k)
    _check_pairs(pred, gt, "persp_reproj_loss")
    T = t.as_array() if isinstance(t, Translation) else np.asarray(t, float)
    r = pred - gt
    value = float(np.abs(r).sum())

    sgn = np.sign(r)
    depth = J[:, 2] + T[2]
    a = k.f / depth
    grad = np.empty_like(J)
    grad[:, 0] = sgn[:, 0] * a
    grad[:, 1] = sgn[:, 1] * a
    grad[:, 2] = -a / depth * (sgn[:, 0] * (J[:, 0] + T[0]) + sgn[:, 1] * (J[:, 1] + T[1]))
    return LossReport(value, {"joints3d": grad}, _blocked_except("joints3d"))


def _covered_union(pred_d, gt_d):
    return (np.asarray(pred_d) > 0) | (np.asarray(gt_d) > 0)


def translation_losses(pred: dict, gt: dict, weights: LossWeights | None = None) -> LossReport:
    """Weighted IUV and distortion squared errors plus the L1 error of Tz.

    Image terms are means over pixels covered in either prediction or target
    (background is zero in both). Gradients for the images are reported under
    ``"iuv"`` and ``"distortion"``; Tz flows into the translation block.
    """
    lam = weights or LossWeights()
    p_iuv, g_iuv = np.asarray(pred["iuv"], float), np.asarray(gt["iuv"], float)
    p_d, g_d = np.asarray(pred["distortion"], float), np.asarray(gt["distortion"], float)
    _check_pairs(p_iuv, g_iuv, "iuv")
    _check_pairs(p_d, g_d, "distortion")
    if p_iuv.shape[:2] != p_d.shape:
        raise ShapeMismatch("iuv and distortion images are not aligned")
    mask = _covered_union(p_d, g_d)
    n = int(mask.sum())

    grads = {}
    if n:
        diff_iuv = (p_iuv - g_iuv) * mask[..., None]
        diff_d = (p_d - g_d) * mask
        l_iuv = float(np.sum(diff_iuv ** 2) / (3 * n))
        l_d = float(np.sum(diff_d ** 2) / n)
        grads["iuv"] = lam.iuv * 2.0 * diff_iuv / (3 * n)
        grads["distortion"] = lam.distortion * 2.0 * diff_d / n
    else:
        l_iuv = l_d = 0.0
        grads["iuv"] = np.zeros_like(p_iuv)
        grads["distortion"] = np.zeros_like(p_d)
    dz = float(pred["Tz"]) - float(gt["Tz"])
    l_z = abs(dz)
    grads["translation"] = np.array([0.0, 0.0, lam.tz * np.sign(dz)])
    value = lam.iuv * l_iuv + lam.distortion * l_d + lam.tz * l_z
    return LossReport(value, grads, _blocked_except("translation"))


def mesh_losses(pred: dict, gt: dict, weights: LossWeights | None = None) -> LossReport:
    """Mean per-point L1 errors of vertices and 3D joints, weighted."""
    lam = weights or LossWeights()
    value = 0.0
    grads = {}
    for key, w in (("vertices", lam.vertices), ("joints3d", lam.joints3d)):
        if key not in pred:
            continue
        p, g = np.asarray(pred[key], float), np.asarray(gt[key], float)
        _check_pairs(p, g, key)
        r = p - g
        n = len(p)
        value += w * float(np.abs(r).sum()) / n
        grads[key] = w * np.sign(r) / n
    return LossReport(value, grads, _blocked_except(*grads))
