"""File formats: PFM float images, 16-bit IUV PNGs, OBJ bodies with a JSON sidecar.

PFM files written here store rows top-down (first row = image top), which
differs from the usual bottom-up PFM convention; the raster header records it.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import png
from scipy import sparse

from .body import ArticulatedBody
from .geometry import CameraIntrinsics
from .raster import NONE, RasterBuffers

BUFFER_FILES = ("depth.pfm", "iuv.png", "distortion.pfm")
SENTINELS = {
    "depth_background": "inf",
    "distortion_background": 0.0,
    "iuv_background": [0, 0, 0],
    "iuv_red": "part_id + 1 (0 = background)",
    "iuv_green_blue": "round(U * 65535), round(V * 65535)",
    "pfm_row_order": "top-down",
}


class FormatError(ValueError):
    """A file did not parse; the message names the file and, when known, the line."""


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def read_json(path) -> dict:
    path = Path(path)
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc


def require(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise FormatError(f"{where}: missing field '{key}'")
    return d[key]


def write_pfm(path, image) -> None:
    img = np.asarray(image, dtype="<f4")
    if img.ndim != 2:
        raise ValueError("only single-channel PFM is supported")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind != b"Pf":
            raise FormatError(f"{path}:1: expected single-channel 'Pf' header, got {kind!r}")
        try:
            w, h = (int(x) for x in fh.readline().split())
            scale = float(fh.readline())
        except ValueError as exc:
            raise FormatError(f"{path}: malformed PFM header") from exc
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h:
        raise FormatError(f"{path}: expected {w * h} floats, found {data.size}")
    return data.reshape(h, w).astype(np.float64)


def write_iuv_png(path, buffers: RasterBuffers) -> None:
    H, W = buffers.shape
    rgb = np.zeros((H, W, 3), dtype=np.uint16)
    cov = buffers.covered
    rgb[..., 0] = np.where(cov, buffers.part + 1, 0)
    rgb[..., 1] = np.rint(np.clip(buffers.iuv[..., 1], 0, 1) * 65535) * cov
    rgb[..., 2] = np.rint(np.clip(buffers.iuv[..., 2], 0, 1) * 65535) * cov
    writer = png.Writer(W, H, greyscale=False, bitdepth=16)
    with open(path, "wb") as fh:
        writer.write(fh, rgb.reshape(H, W * 3).tolist())


def read_iuv_png(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (part image with NONE background, iuv float image)."""
    w, h, rows, info = png.Reader(filename=str(path)).asDirect()
    planes = info["planes"]
    arr = np.vstack([np.asarray(r, dtype=np.uint16) for r in rows]).reshape(h, w, planes)
    part = arr[..., 0].astype(np.int32) - 1
    part[part < 0] = NONE
    iuv = np.zeros((h, w, 3))
    iuv[..., 0] = arr[..., 0]
    iuv[..., 1:] = arr[..., 1:3] / 65535.0
    return part, iuv


def buffers_header(buffers: RasterBuffers) -> dict:
    k = buffers.intrinsics
    return {
        "Tz": buffers.Tz,
        "intrinsics": None if k is None else k.to_dict(),
        "empty_raster": bool(buffers.empty),
        "sentinels": SENTINELS,
    }


def write_buffers(out_dir, buffers: RasterBuffers) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / "depth.pfm", buffers.depth)
    write_pfm(out / "distortion.pfm", buffers.distortion)
    write_iuv_png(out / "iuv.png", buffers)


def read_buffers(scene_dir, Tz: float | None = None, intrinsics=None) -> RasterBuffers:
    d = Path(scene_dir)
    depth = read_pfm(d / "depth.pfm")
    distortion = read_pfm(d / "distortion.pfm")
    part, iuv = read_iuv_png(d / "iuv.png")
    if Tz is None or intrinsics is None:
        meta = read_json(d / "meta.json")
        Tz = meta.get("translation", {}).get("Tz", meta.get("Tz")) if Tz is None else Tz
        if intrinsics is None and meta.get("intrinsics"):
            intrinsics = CameraIntrinsics.from_dict(meta["intrinsics"])
    return RasterBuffers(depth, part, iuv, distortion, float(Tz), intrinsics)


def write_body(obj_path, body: ArticulatedBody) -> Path:
    """Write ``name.obj`` (v/f lines only) plus ``name.json`` with the rig."""
    obj_path = Path(obj_path)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in body.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in body.faces.tolist()]
    obj_path.write_text("\n".join(lines) + "\n")
    w = body.skin_weights.tocsr()
    reg = body.regressor.tocsr()
    sidecar = {
        "part_id": body.part_id.tolist(),
        "uv": body.uv.tolist(),
        "skin_weights": [
            {"joints": w.indices[w.indptr[i]:w.indptr[i + 1]].tolist(),
             "weights": w.data[w.indptr[i]:w.indptr[i + 1]].tolist()}
            for i in range(w.shape[0])
        ],
        "regressor": [
            {"vertices": reg.indices[reg.indptr[j]:reg.indptr[j + 1]].tolist(),
             "weights": reg.data[reg.indptr[j]:reg.indptr[j + 1]].tolist()}
            for j in range(reg.shape[0])
        ],
        "skeleton": {
            "names": list(body.joint_names),
            "parents": body.parents.tolist(),
            "rest_joints": body.rest_joints.tolist(),
        },
    }
    sidecar_path = obj_path.with_suffix(".json")
    write_json(sidecar_path, sidecar)
    return sidecar_path


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    # accept "i", "i/t" and "i/t/n" index forms
                    faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from exc
    if not verts:
        raise FormatError(f"{path}: no vertices found")
    return np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3)


def read_body(obj_path) -> ArticulatedBody:
    obj_path = Path(obj_path)
    vertices, faces = read_obj(obj_path)
    sidecar_path = obj_path.with_suffix(".json")
    side = read_json(sidecar_path)
    where = str(sidecar_path)
    n = len(vertices)
    skel = require(side, "skeleton", where)
    parents = np.array(require(skel, "parents", where + ":skeleton"), dtype=np.int64)
    k = len(parents)

    rows, cols, vals = [], [], []
    for i, entry in enumerate(require(side, "skin_weights", where)):
        rows += [i] * len(entry["joints"])
        cols += entry["joints"]
        vals += entry["weights"]
    weights = sparse.csr_matrix((vals, (rows, cols)), shape=(n, k))
    rows, cols, vals = [], [], []
    for j, entry in enumerate(require(side, "regressor", where)):
        rows += [j] * len(entry["vertices"])
        cols += entry["vertices"]
        vals += entry["weights"]
    regressor = sparse.csr_matrix((vals, (rows, cols)), shape=(k, n))
    body = ArticulatedBody(
        vertices=vertices,
        faces=faces,
        part_id=np.array(require(side, "part_id", where), dtype=np.int64),
        uv=np.array(require(side, "uv", where), dtype=float),
        parents=parents,
        rest_joints=np.array(require(skel, "rest_joints", where + ":skeleton"), dtype=float),
        skin_weights=weights,
        regressor=regressor,
        joint_names=tuple(skel.get("names", ())) or tuple(str(i) for i in range(k)),
    )
    body.validate()
    return body
