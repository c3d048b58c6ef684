"""Z-buffer rasterizer for depth, part, IUV and distortion images.

Vertices are snapped to a 1/256 pixel grid and coverage is decided with exact
integer edge functions plus a top-left style ownership rule, so triangles that
share an edge never both claim a pixel. Depth and UV use perspective-correct
interpolation (1/z and attr/z are interpolated in screen space).
"""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

from .errors import EmptyRaster
from .geometry import CameraIntrinsics, Translation, camera_depth, perspective_project

logger = logging.getLogger(__name__)

NONE = -1
SUBPIXEL_BITS = 8
SUBPIXEL = 1 << SUBPIXEL_BITS
# Snapped coordinates beyond this magnitude could overflow int64 edge functions.
_MAX_FIXED = 1 << 29
_CHUNK = 1 << 22
D_J_RANGE = (0.1, 10.0)
UV_FALLBACK = 1.0


@dataclass(frozen=True, eq=False)
class RasterBuffers:
    """Rendered images over an H x W grid.

    Background: ``depth = inf``, ``part = NONE``, ``iuv = 0``, ``distortion = 0``.
    The I channel of ``iuv`` is ``part + 1`` so that 0 unambiguously means background.
    """

    depth: np.ndarray
    part: np.ndarray
    iuv: np.ndarray
    distortion: np.ndarray
    Tz: float
    intrinsics: CameraIntrinsics | None = None
    skipped_faces: int = 0

    @property
    def covered(self) -> np.ndarray:
        return self.part != NONE

    @property
    def empty(self) -> bool:
        return not self.covered.any()

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


def empty_buffers(height: int, width: int, Tz: float, intrinsics=None) -> RasterBuffers:
    return RasterBuffers(
        depth=np.full((height, width), np.inf),
        part=np.full((height, width), NONE, dtype=np.int32),
        iuv=np.zeros((height, width, 3)),
        distortion=np.zeros((height, width)),
        Tz=float(Tz),
        intrinsics=intrinsics,
    )


def snap(points2d) -> np.ndarray:
    """Pixel coordinates to fixed point (units of 1/SUBPIXEL pixel)."""
    return np.rint(np.asarray(points2d, dtype=float) * SUBPIXEL).astype(np.int64)


def _owns(dx, dy):
    # Tie rule for points exactly on an edge: equivalent to nudging the sample
    # point by (+1, +eta) so every shared edge goes to exactly one side.
    return (dy > 0) | ((dy == 0) & (dx < 0))


def _fragments(tri: np.ndarray, width: int, height: int):
    """Covered pixels of fixed-point triangles.

    ``tri`` is (M, 3, 2) int64. Yields (face, row, col, l0, l1, l2) arrays per
    chunk, where l* are barycentric weights of the three vertices.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    area2 = (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]) - (c[:, 1] - a[:, 1]) * (b[:, 0] - a[:, 0])
    flip = area2 < 0
    b, c = np.where(flip[:, None], c, b), np.where(flip[:, None], b, c)
    area2 = np.abs(area2)

    half = SUBPIXEL // 2
    lo = np.minimum(np.minimum(a, b), c)
    hi = np.maximum(np.maximum(a, b), c)
    col0 = np.maximum(-((half - lo[:, 0]) // SUBPIXEL), 0)
    row0 = np.maximum(-((half - lo[:, 1]) // SUBPIXEL), 0)
    col1 = np.minimum((hi[:, 0] - half) // SUBPIXEL, width - 1)
    row1 = np.minimum((hi[:, 1] - half) // SUBPIXEL, height - 1)
    nc = np.maximum(col1 - col0 + 1, 0)
    nr = np.maximum(row1 - row0 + 1, 0)
    sizes = np.where(area2 > 0, nc * nr, 0)
    faces = np.flatnonzero(sizes)
    if faces.size == 0:
        return

    bounds = np.cumsum(sizes[faces])
    start = 0
    while start < faces.size:
        base = bounds[start - 1] if start else 0
        stop = int(np.searchsorted(bounds, base + _CHUNK, side="right"))
        stop = max(stop, start + 1)
        idx = faces[start:stop]
        counts = sizes[idx]
        face = np.repeat(idx, counts)
        local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        row = row0[face] + local // nc[face]
        col = col0[face] + local % nc[face]
        px = col * SUBPIXEL + half
        py = row * SUBPIXEL + half

        inside = np.ones(face.size, dtype=bool)
        edge_vals = []
        for p, q in ((b, c), (c, a), (a, b)):
            p, q = p[face], q[face]
            dx = q[:, 0] - p[:, 0]
            dy = q[:, 1] - p[:, 1]
            e = (px - p[:, 0]) * dy - (py - p[:, 1]) * dx
            inside &= (e > 0) | ((e == 0) & _owns(dx, dy))
            edge_vals.append(e)
        face, row, col = face[inside], row[inside], col[inside]
        denom = area2[face].astype(float)
        lam = [e[inside] / denom for e in edge_vals]
        # undo the winding swap so weights line up with the original vertex order
        fl = flip[face]
        l0, l1, l2 = lam[0], np.where(fl, lam[2], lam[1]), np.where(fl, lam[1], lam[2])
        yield face, row, col, l0, l1, l2
        start = stop


def coverage_count(triangles2d, width: int, height: int) -> np.ndarray:
    """How many of the given pixel-space triangles cover each pixel center."""
    tri = snap(triangles2d).reshape(-1, 3, 2)
    count = np.zeros((height, width), dtype=np.int64)
    for _, row, col, *_ in _fragments(tri, width, height):
        np.add.at(count, (row, col), 1)
    return count


def rasterize(vertices, faces, part_id, uv, t: Translation, k: CameraIntrinsics) -> RasterBuffers:
    """Render body-frame geometry seen by camera ``k`` with the body offset by ``t``.

    ``part_id`` and ``uv`` are per vertex; a face takes the part of its first vertex.
    Raises PointBehindCamera if any vertex is not in front of the camera.
    """
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    uv = np.asarray(uv, dtype=float)
    H, W = k.height, k.width
    Tz = t.Tz if isinstance(t, Translation) else float(np.asarray(t)[2])
    out = empty_buffers(H, W, Tz, k)

    screen = perspective_project(vertices, t, k)
    z = camera_depth(vertices, t)
    fixed = snap(screen)
    tri = fixed[faces]
    ok = np.all(np.abs(tri) < _MAX_FIXED, axis=(1, 2))
    skipped = int((~ok).sum())
    if skipped:
        logger.warning("skipping %d faces with projected coordinates beyond the fixed-point range", skipped)
    face_ids = np.flatnonzero(ok)
    tri = tri[ok]

    inv_z = 1.0 / z
    uv_z = uv * inv_z[:, None]
    face_part = np.asarray(part_id)[faces[:, 0]]

    best_depth = out.depth.ravel()
    best_face = np.full(H * W, -1, dtype=np.int64)
    best_uv = np.zeros((H * W, 2))
    for face, row, col, l0, l1, l2 in _fragments(tri, W, H):
        f = faces[face_ids[face]]
        iz = l0 * inv_z[f[:, 0]] + l1 * inv_z[f[:, 1]] + l2 * inv_z[f[:, 2]]
        d = 1.0 / iz
        w_uv = (l0[:, None] * uv_z[f[:, 0]] + l1[:, None] * uv_z[f[:, 1]] + l2[:, None] * uv_z[f[:, 2]]) * d[:, None]
        pix = row * W + col
        gface = face_ids[face]
        # nearest fragment per pixel; equal depth keeps the lower face index
        order = np.lexsort((gface, d, pix))
        pix, d, gface, w_uv = pix[order], d[order], gface[order], w_uv[order]
        first = np.ones(pix.size, dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        pix, d, gface, w_uv = pix[first], d[first], gface[first], w_uv[first]
        cur_d, cur_f = best_depth[pix], best_face[pix]
        better = (d < cur_d) | ((d == cur_d) & (gface < cur_f))
        pix = pix[better]
        best_depth[pix] = d[better]
        best_face[pix] = gface[better]
        best_uv[pix] = w_uv[better]

    covered = best_face >= 0
    depth = best_depth.reshape(H, W)
    part = np.where(covered, face_part[np.maximum(best_face, 0)], NONE).reshape(H, W).astype(np.int32)
    iuv = np.zeros((H * W, 3))
    iuv[covered, 0] = part.ravel()[covered] + 1
    iuv[covered, 1:] = np.clip(best_uv[covered], 0.0, 1.0)
    distortion = np.zeros(H * W)
    distortion[covered] = Tz / best_depth[covered]
    if not covered.any():
        logger.debug("empty raster: nothing projects inside the %dx%d image", W, H)
    return RasterBuffers(depth, part, iuv.reshape(H, W, 3), distortion.reshape(H, W), Tz, k, skipped)


def render_body(body, vertices, t: Translation, k: CameraIntrinsics) -> RasterBuffers:
    return rasterize(vertices, body.faces, body.part_id, body.uv, t, k)


def max_distortion_scale(buffers: RasterBuffers) -> float:
    """The largest distortion value over body pixels (tau)."""
    if buffers.empty:
        raise EmptyRaster("no covered pixels; max distortion scale is undefined")
    return float(buffers.distortion[buffers.covered].max())


@dataclass(frozen=True, eq=False)
class UvMap:
    values: np.ndarray
    coverage: np.ndarray

    @property
    def resolution(self) -> int:
        return self.values.shape[0]


def warp_to_uv(channel, buffers: RasterBuffers, resolution: int = 64) -> UvMap:
    """Splat a per-pixel channel into UV space at the nearest texel.

    When several pixels land on one texel the nearest surface (smallest depth) wins.
    """
    R = int(resolution)
    values = np.zeros((R, R))
    coverage = np.zeros((R, R), dtype=bool)
    channel = np.asarray(channel, dtype=float)
    if channel.shape != buffers.shape:
        raise ValueError(f"channel shape {channel.shape} does not match buffers {buffers.shape}")
    mask = buffers.covered.ravel()
    if not mask.any():
        return UvMap(values, coverage)
    uv = buffers.iuv.reshape(-1, 3)[mask, 1:]
    col = np.minimum((uv[:, 0] * R).astype(np.int64), R - 1)
    row = np.minimum((uv[:, 1] * R).astype(np.int64), R - 1)
    vals = channel.ravel()[mask]
    depth = buffers.depth.ravel()[mask]
    texel = row * R + col
    order = np.lexsort((np.arange(texel.size), depth, texel))
    texel, vals = texel[order], vals[order]
    first = np.ones(texel.size, dtype=bool)
    first[1:] = texel[1:] != texel[:-1]
    values.ravel()[texel[first]] = vals[first]
    coverage.ravel()[texel[first]] = True
    return UvMap(values, coverage)


def _bilinear_masked(image, mask, x, y, fallback):
    """Bilinear samples at continuous pixel coords (centers at integer + 0.5).

    Only texels where ``mask`` is set contribute; weights are renormalized and
    points with no contributing neighbor get ``fallback`` and a True flag.
    """
    Hh, Ww = image.shape
    gx = np.asarray(x, float) - 0.5
    gy = np.asarray(y, float) - 0.5
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx, fy = gx - x0, gy - y0
    acc = np.zeros(gx.shape)
    wsum = np.zeros(gx.shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = np.clip(x0 + dx, 0, Ww - 1)
            yi = np.clip(y0 + dy, 0, Hh - 1)
            w = wx * wy * mask[yi, xi]
            acc += w * np.where(mask[yi, xi], image[yi, xi], 0.0)
            wsum += w
    flag = wsum <= 0
    out = np.where(flag, fallback, acc / np.where(flag, 1.0, wsum))
    return out, flag


def sample_uv(uv_map: UvMap, uv_points) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup of UV points over covered texels; returns (values, fallback_flags)."""
    pts = np.atleast_2d(np.asarray(uv_points, dtype=float))
    R = uv_map.resolution
    return _bilinear_masked(uv_map.values, uv_map.coverage, pts[:, 0] * R, pts[:, 1] * R, UV_FALLBACK)


def sample_distortion_at_joints(buffers: RasterBuffers, joints2d) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint distortion weights d_J sampled from the distortion image.

    Joints outside the image or on background get 1.0 and a True flag. Values
    are clamped to [0.1, 10].
    """
    pts = np.atleast_2d(np.asarray(joints2d, dtype=float))
    H, W = buffers.shape
    col = np.floor(pts[:, 0]).astype(np.int64)
    row = np.floor(pts[:, 1]).astype(np.int64)
    inside = (col >= 0) & (col < W) & (row >= 0) & (row < H)
    on_body = np.zeros(len(pts), dtype=bool)
    on_body[inside] = buffers.covered[row[inside], col[inside]]
    vals, _ = _bilinear_masked(buffers.distortion, buffers.covered, pts[:, 0], pts[:, 1], 1.0)
    vals = np.where(on_body, vals, 1.0)
    return np.clip(vals, *D_J_RANGE), ~on_body
