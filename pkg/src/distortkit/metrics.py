"""3D joint/vertex errors, segmentation IoU and tau-based protocol buckets."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateConfiguration, ShapeMismatch
from .raster import NONE

PDHUMAN_THRESHOLDS = (3.0, 2.6, 2.2, 1.8, 1.4)
REAL_THRESHOLDS = (1.8, 1.4, 1.0)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points, float) @ self.rotation.T + self.translation


@dataclass
class MetricReport:
    sample_id: str
    mpjpe: float
    pa_mpjpe: float
    pve: float = float("nan")
    miou: float = float("nan")
    p_miou: float = float("nan")
    tau: float = float("nan")
    protocol: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def procrustes_align(src, dst) -> SimilarityTransform:
    """Least-squares similarity transform taking ``src`` onto ``dst``."""
    X = np.asarray(src, float)
    Y = np.asarray(dst, float)
    if X.shape != Y.shape:
        raise ShapeMismatch(f"point sets differ in shape: {X.shape} vs {Y.shape}")
    if X.ndim != 2 or X.shape[0] < 3:
        raise DegenerateConfiguration("need at least three corresponding points")
    mu_x, mu_y = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mu_x, Y - mu_y
    var_x = float(np.sum(Xc ** 2))
    if var_x <= 1e-300:
        raise DegenerateConfiguration("source points are all coincident")

    cov = Yc.T @ Xc
    U, S, Vt = np.linalg.svd(cov)
    D = np.ones(len(S))
    D[-1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = (U * D) @ Vt
    scale = float(np.sum(S * D) / var_x)
    t = mu_y - scale * R @ mu_x
    return SimilarityTransform(scale, R, t)


def _check(pred, gt):
    p, g = np.asarray(pred, float), np.asarray(gt, float)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    return p, g


def mpjpe(pred, gt, root: int = 0) -> float:
    """Mean joint error in mm after moving both skeletons' root joint to the origin."""
    p, g = _check(pred, gt)
    p = p - p[root]
    g = g - g[root]
    return float(np.linalg.norm(p - g, axis=-1).mean() * 1000.0)


def pa_mpjpe(pred, gt) -> float:
    """Mean joint error in mm after Procrustes alignment of pred onto gt."""
    p, g = _check(pred, gt)
    aligned = procrustes_align(p, g).apply(p)
    return float(np.linalg.norm(aligned - g, axis=-1).mean() * 1000.0)


def pve(pred, gt, pred_root=None, gt_root=None) -> float:
    """Mean vertex error in mm; vertices are centered on the given pelvis positions."""
    p, g = _check(pred, gt)
    if pred_root is not None:
        p = p - np.asarray(pred_root, float)
    if gt_root is not None:
        g = g - np.asarray(gt_root, float)
    return float(np.linalg.norm(p - g, axis=-1).mean() * 1000.0)


def iou_per_class(pred, gt, classes) -> dict:
    """IoU of each class label; classes with an empty union are left out."""
    p, g = np.asarray(pred), np.asarray(gt)
    out = {}
    for c in classes:
        pm, gm = p == c, g == c
        union = np.count_nonzero(pm | gm)
        if union:
            out[c] = np.count_nonzero(pm & gm) / union
    return out


def miou(pred_part, gt_part, mode: str = "fg") -> float:
    """Mean IoU of part-label images (background = NONE).

    ``mode="fg"`` averages foreground and background IoU; ``mode="parts"``
    averages IoU over the part labels present in the ground truth.
    """
    p, g = np.asarray(pred_part), np.asarray(gt_part)
    if p.shape != g.shape:
        raise ShapeMismatch(f"part images differ in size: {p.shape} vs {g.shape}")
    if mode == "fg":
        ious = iou_per_class((p != NONE).astype(np.int8), (g != NONE).astype(np.int8), (1, 0))
    elif mode == "parts":
        present = sorted(int(c) for c in np.unique(g) if c != NONE)
        ious = iou_per_class(p, g, present)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not ious:
        return 1.0
    return float(np.mean(list(ious.values())))


def assign_protocol(tau: float, thresholds=PDHUMAN_THRESHOLDS) -> int:
    """Protocol number for ``tau``: len(thresholds) for the top bucket down to 1.

    A sample lands in the bucket of the first (largest) threshold <= tau. Values
    below every threshold go to protocol 0.
    """
    th = list(thresholds)
    if any(b >= a for a, b in zip(th, th[1:])):
        raise ValueError("thresholds must be strictly decreasing")
    for i, thr in enumerate(th):
        if tau >= thr:
            return len(th) - i
    return 0


def protocol_threshold(protocol: int, thresholds=PDHUMAN_THRESHOLDS) -> float | None:
    """The tau threshold that names a protocol bucket, or None for bucket 0."""
    if protocol == 0:
        return None
    return float(thresholds[len(thresholds) - protocol])


def evaluate_sample(sample_id, pred: dict, gt: dict, thresholds=PDHUMAN_THRESHOLDS) -> MetricReport:
    """Metrics for one sample; dicts carry joints3d and optionally vertices, part, tau."""
    pj, gj = np.asarray(pred["joints3d"], float), np.asarray(gt["joints3d"], float)
    report = MetricReport(str(sample_id), mpjpe(pj, gj), pa_mpjpe(pj, gj))
    if "vertices" in pred and "vertices" in gt:
        report.pve = pve(pred["vertices"], gt["vertices"], pj[0], gj[0])
    if "part" in pred and "part" in gt:
        report.miou = miou(pred["part"], gt["part"], "fg")
        report.p_miou = miou(pred["part"], gt["part"], "parts")
    if gt.get("tau") is not None:
        report.tau = float(gt["tau"])
        report.protocol = assign_protocol(report.tau, thresholds)
    return report


def aggregate(reports, thresholds=PDHUMAN_THRESHOLDS) -> dict:
    """Mean metrics over all samples and per protocol bucket, in sorted-id order."""
    reports = sorted(reports, key=lambda r: r.sample_id)
    keys = ("mpjpe", "pa_mpjpe", "pve", "miou", "p_miou", "tau")
    out = {}
    groups = {"all": reports}
    for r in reports:
        groups.setdefault(str(r.protocol), []).append(r)
    for name in sorted(groups):
        rows = groups[name]
        entry = {"count": len(rows)}
        if name not in ("all", "0"):
            entry["tau_threshold"] = protocol_threshold(int(name), thresholds)
        for key in keys:
            vals = np.array([getattr(r, key) for r in rows], float)
            vals = vals[np.isfinite(vals)]
            entry[key] = float(vals.mean()) if vals.size else None
        out[name] = entry
    return out
