import numpy as np
import pytest

from distortkit import io as fio
from distortkit.geometry import CameraIntrinsics, Translation
from distortkit.raster import render_body


def test_pfm_roundtrip(tmp_path):
    img = np.arange(12, dtype=np.float32).reshape(3, 4) / 7
    img[0, 0] = np.inf
    fio.write_pfm(tmp_path / "x.pfm", img)
    np.testing.assert_array_equal(fio.read_pfm(tmp_path / "x.pfm"), img.astype(np.float64))
    (tmp_path / "bad.pfm").write_bytes(b"PF\n1 1\n-1\n")
    with pytest.raises(fio.FormatError, match="bad.pfm:1"):
        fio.read_pfm(tmp_path / "bad.pfm")


def test_buffers_roundtrip(tmp_path, body, posed):
    verts, _ = posed
    k = CameraIntrinsics.centered(120.0, 64)
    buf = render_body(body, verts, Translation(0, 0, 2.0), k)
    fio.write_buffers(tmp_path, buf)
    back = fio.read_buffers(tmp_path, 2.0, k)
    np.testing.assert_array_equal(back.part, buf.part)
    np.testing.assert_array_equal(back.covered, buf.covered)
    np.testing.assert_allclose(back.distortion, buf.distortion, rtol=1e-7)
    np.testing.assert_allclose(back.iuv[..., 1:], buf.iuv[..., 1:], atol=1 / 65535)
    assert fio.buffers_header(buf)["sentinels"]["iuv_red"].startswith("part_id + 1")


def test_body_roundtrip(tmp_path, body):
    side = fio.write_body(tmp_path / "b.obj", body)
    assert side.name == "b.json"
    back = fio.read_body(tmp_path / "b.obj")
    np.testing.assert_array_equal(back.vertices, body.vertices)
    np.testing.assert_array_equal(back.faces, body.faces)
    assert (back.skin_weights != body.skin_weights).nnz == 0
    assert (back.regressor != body.regressor).nnz == 0


def test_obj_errors(tmp_path):
    p = tmp_path / "m.obj"
    p.write_text("v 0 0 0\nv 1 x 0\n")
    with pytest.raises(fio.FormatError, match="m.obj:2"):
        fio.read_obj(p)
    p.write_text("# nothing\n")
    with pytest.raises(fio.FormatError):
        fio.read_obj(p)
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2/2 3\n")
    _, faces = fio.read_obj(p)
    assert faces.tolist() == [[0, 1, 2]]


def test_json_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "a": 1,\n}')
    with pytest.raises(fio.FormatError, match="c.json:3"):
        fio.read_json(p)
    with pytest.raises(fio.FormatError, match="missing field 'f'"):
        fio.require({}, "f", "cam.json")
