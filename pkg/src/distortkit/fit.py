"""Optimization stand-in for the learned estimators.

Recovers Tz from distortion evidence, the weak camera from 2D keypoints, the
focal length from both, and refines 3D joints under perspective projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np

from .errors import DegenerateConfiguration, EmptyRaster
from .geometry import (
    TZ_MAX,
    CameraIntrinsics,
    CropBox,
    Translation,
    WeakPerspective,
    crop_to_full_translation,
    focal_from_weak,
    perspective_project,
)
from .loss import persp_reproj_loss, weak_reproj_loss
from .raster import RasterBuffers, sample_distortion_at_joints

logger = logging.getLogger(__name__)

CROP_RESOLUTION = 224
STEP_FLOOR = 1e-12


@dataclass
class Descent:
    x: np.ndarray
    losses: list
    iters: int
    converged: bool


def descend(objective, x0, step=1.0, max_iter=2000, rtol=1e-8, floor=STEP_FLOOR) -> Descent:
    """Gradient descent along the normalized (sub)gradient with backtracking.

    ``objective(x)`` returns ``(value, grad)``. Each iteration first tries twice
    the last accepted step and halves it until the loss strictly decreases.
    Stops when the relative decrease drops below ``rtol``, the loss or gradient
    vanishes, or no step above ``floor`` decreases the loss.
    """
    x = np.array(x0, dtype=float)
    val, g = objective(x)
    losses = [val]
    for it in range(max_iter):
        gn = float(np.linalg.norm(g))
        if val == 0.0 or gn == 0.0:
            return Descent(x, losses, it, True)
        direction = g / gn
        step = 2.0 * step
        while True:
            cand = x - step * direction
            cval, cg = objective(cand)
            if cval < val:
                break
            step *= 0.5
            if step < floor:
                return Descent(x, losses, it, True)
        rel = (val - cval) / val
        x, val, g = cand, cval, cg
        losses.append(val)
        if rel < rtol:
            return Descent(x, losses, it + 1, True)
    return Descent(x, losses, max_iter, False)


def estimate_tz_from_distortion(distortion, depth) -> float:
    """Tz as the median of distortion * depth over covered pixels."""
    d = np.asarray(distortion, float)
    z = np.asarray(depth, float)
    mask = (d > 0) & np.isfinite(z) & (z > 0)
    if not mask.any():
        raise EmptyRaster("no covered pixels to estimate Tz from")
    return float(np.median(d[mask] * z[mask]))


def lstsq_weak(joints3d, joints2d, k: CameraIntrinsics, weights=None) -> WeakPerspective:
    """Closed-form (weighted) least-squares weak camera matching 2D points.

    Solves ``joints2d ~ a (xy + t) + c`` for a shared scale ``a = s h / 2``.
    """
    J = np.asarray(joints3d, float)[:, :2]
    P = np.asarray(joints2d, float) - np.array([k.cx, k.cy])
    n = len(J)
    w = np.ones(n) if weights is None else np.sqrt(np.asarray(weights, float))
    if n < 2 or np.ptp(J, axis=0).max() <= 0:
        raise DegenerateConfiguration("need at least two distinct joints")
    # unknowns: a, b_x = a tx, b_y = a ty
    A = np.zeros((2 * n, 3))
    A[:n, 0], A[:n, 1] = J[:, 0], 1.0
    A[n:, 0], A[n:, 2] = J[:, 1], 1.0
    rhs = np.concatenate([P[:, 0], P[:, 1]])
    ww = np.concatenate([w, w])
    sol, *_ = np.linalg.lstsq(A * ww[:, None], rhs * ww, rcond=None)
    a, bx, by = sol
    if a <= 0:
        raise DegenerateConfiguration("fitted weak scale is not positive")
    return WeakPerspective(float(2.0 * a / k.height), float(bx / a), float(by / a))


@dataclass
class WeakFit:
    weak: WeakPerspective
    losses: list
    iters: int
    converged: bool


def fit_weak_camera(joints3d, joints2d_gt, d_j, init: WeakPerspective, k: CameraIntrinsics,
                    max_iter: int = 2000, rtol: float = 1e-8) -> WeakFit:
    """Descend the distortion-weighted weak loss over (s, tx, ty) only."""
    J = np.asarray(joints3d, float)
    if len(J) < 2 or np.ptp(J[:, :2], axis=0).max() <= 0:
        raise DegenerateConfiguration("need at least two distinct joints")

    def objective(x):
        if x[0] <= 0:
            return np.inf, np.zeros(3)
        rep = weak_reproj_loss(J, WeakPerspective.from_array(x), joints2d_gt, d_j, k)
        return rep.value, rep.grads["weak"]

    step = 1e-2 * max(init.s, 1.0)
    res = descend(objective, init.as_array(), step=step, max_iter=max_iter, rtol=rtol)
    if not res.converged:
        logger.warning("weak camera fit hit the %d iteration cap", max_iter)
    return WeakFit(WeakPerspective.from_array(res.x), res.losses, res.iters, res.converged)


@dataclass
class JointFit:
    joints3d: np.ndarray
    losses: list
    iters: int
    converged: bool


def descend_separable(objective, x0, step=1e-3, max_iter=2000, rtol=1e-8, floor=STEP_FLOOR) -> Descent:
    """Descent for objectives that are a sum of one term per coordinate.

    ``objective(x)`` returns ``(terms, grad)`` where ``terms[i]`` depends on
    ``x[i]`` only. Every coordinate keeps its own step size: it is doubled
    each iteration and halved until that coordinate's term decreases, so the
    total is monotone non-increasing.
    """
    x = np.array(x0, dtype=float)
    terms, g = objective(x)
    steps = np.full(x.shape, float(step))
    losses = [float(terms.sum())]
    active = np.ones(x.shape, dtype=bool)
    for it in range(max_iter):
        active &= (g != 0) & (terms > 0)
        if not active.any():
            return Descent(x, losses, it, True)
        steps[active] *= 2.0
        pending = active.copy()
        cand = x.copy()
        while pending.any():
            cand[pending] = x[pending] - steps[pending] * np.sign(g[pending])
            cterms, _ = objective(cand)
            ok = cterms < terms
            pending &= ~ok
            steps[pending] *= 0.5
            stuck = pending & (steps < floor)
            cand[stuck] = x[stuck]
            active &= ~stuck
            pending &= ~stuck
        cterms, cg = objective(cand)
        total = float(cterms.sum())
        rel = (losses[-1] - total) / losses[-1] if losses[-1] > 0 else 0.0
        x, terms, g = cand, cterms, cg
        losses.append(total)
        if rel < rtol:
            return Descent(x, losses, it + 1, True)
    return Descent(x, losses, max_iter, False)


def fit_joints_perspective(joints3d_init, translation: Translation, f: float, joints2d_gt,
                           k: CameraIntrinsics, max_iter: int = 2000, rtol: float = 1e-8) -> JointFit:
    """Descend the perspective loss over joint (x, y); depths and translation stay fixed.

    With depths frozen each image coordinate depends on one joint coordinate,
    so the loss splits into per-coordinate terms and each coordinate gets its
    own step size.
    """
    if f <= 0:
        raise ValueError("focal length must be positive")
    J0 = np.array(joints3d_init, dtype=float)
    z = J0[:, 2].copy()
    cam = k.with_focal(f)
    gt = np.asarray(joints2d_gt, float)

    def objective(x):
        J = np.column_stack([x.reshape(-1, 2), z])
        rep = persp_reproj_loss(J, translation, gt, cam)
        terms = np.abs(perspective_project(J, translation, cam) - gt).ravel()
        return terms, rep.grads["joints3d"][:, :2].ravel()

    res = descend_separable(objective, J0[:, :2].ravel(), step=1e-3, max_iter=max_iter, rtol=rtol)
    if not res.converged:
        logger.warning("perspective joint fit hit the %d iteration cap", max_iter)
    J = np.column_stack([res.x.reshape(-1, 2), z])
    return JointFit(J, res.losses, res.iters, res.converged)


@dataclass
class FitState:
    weak: WeakPerspective
    translation: Translation
    joints3d: np.ndarray
    f_pixels: float
    box: CropBox
    d_j: np.ndarray
    weak_fit: WeakFit
    joint_fit: JointFit
    converged: bool = field(init=False)

    def __post_init__(self):
        self.converged = self.weak_fit.converged and self.joint_fit.converged

    @property
    def iters(self) -> int:
        return self.weak_fit.iters + self.joint_fit.iters

    def to_dict(self) -> dict:
        t = self.translation
        return {
            "Tz": t.Tz,
            "s": self.weak.s,
            "tx": self.weak.tx,
            "ty": self.weak.ty,
            "f_pixels": self.f_pixels,
            "Tx": t.Tx,
            "Ty": t.Ty,
            "joints3d": self.joints3d.tolist(),
            "converged": self.converged,
            "iters": self.iters,
        }


def fit_pipeline(buffers: RasterBuffers, joints2d_full, joints3d_init, image: CameraIntrinsics,
                 box: CropBox | None = None, crop_resolution: int = CROP_RESOLUTION,
                 max_iter: int = 2000) -> FitState:
    """Tz from the distortion image, then the weak camera, focal and joints.

    The weak camera lives in the square crop resized to ``crop_resolution``;
    the focal length is ``s * box.h * Tz / 2`` so it is expressed in
    full-image pixels, and (Tx, Ty) come from the crop-to-full transform.
    """
    joints2d_full = np.asarray(joints2d_full, float)
    Tz = estimate_tz_from_distortion(buffers.distortion, buffers.depth)
    Tz = float(np.clip(Tz, 1e-6, TZ_MAX))
    if box is None:
        box = CropBox.around(joints2d_full, image.width, image.height)

    crop_k = CameraIntrinsics.centered(1.0, crop_resolution)
    joints2d_crop = box.to_crop(joints2d_full, crop_resolution)
    d_j, _ = sample_distortion_at_joints(buffers, joints2d_full)
    init = lstsq_weak(joints3d_init, joints2d_crop, crop_k, weights=1.0 / d_j)
    weak_fit = fit_weak_camera(joints3d_init, joints2d_crop, d_j, init, crop_k, max_iter=max_iter)
    weak = weak_fit.weak

    f = focal_from_weak(weak.s, box.h, Tz)
    Tx, Ty = crop_to_full_translation(weak, box)
    translation = Translation(Tx, Ty, Tz)
    joint_fit = fit_joints_perspective(joints3d_init, translation, f, joints2d_full,
                                       image, max_iter=max_iter)
    return FitState(weak, translation, joint_fit.joints3d, f, box, d_j, weak_fit, joint_fit)
