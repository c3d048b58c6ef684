import json

import numpy as np
import pytest

from distortkit.errors import ShapeMismatch
from distortkit.geometry import CameraIntrinsics, Translation, WeakPerspective, perspective_project, weak_project
from distortkit.loss import (
    BLOCKS,
    LossWeights,
    mesh_losses,
    persp_reproj_loss,
    translation_losses,
    weak_reproj_loss,
)
from oracles import central_difference

K_CROP = CameraIntrinsics.centered(1.0, 224)
K_FULL = CameraIntrinsics.centered(600.0, 512)


def weak_config(rng, margin=0.5):
    """Random weak-loss inputs whose residuals all stay away from zero."""
    J = rng.uniform(-0.8, 0.8, (24, 3))
    w = WeakPerspective(rng.uniform(0.6, 1.6), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2))
    gt = weak_project(J, w, K_CROP) + rng.choice([-1, 1], (24, 2)) * rng.uniform(margin, 10, (24, 2))
    d = rng.uniform(0.5, 3.0, 24)
    return J, w, gt, d


def persp_config(rng, margin=0.5):
    J = rng.uniform(-0.8, 0.8, (24, 3)) * [1, 1, 0.3]
    t = Translation(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(1.5, 6))
    gt = perspective_project(J, t, K_FULL) + rng.choice([-1, 1], (24, 2)) * rng.uniform(margin, 10, (24, 2))
    return J, t, gt


def check_weak_gradient(seed):
    rng = np.random.default_rng(seed)
    J, w, gt, d = weak_config(rng)
    rep = weak_reproj_loss(J, w, gt, d, K_CROP)
    fd = central_difference(
        lambda x: weak_reproj_loss(J, WeakPerspective.from_array(x), gt, d, K_CROP).value,
        w.as_array(), h=1e-7)
    return rep, fd


def check_persp_gradient(seed):
    rng = np.random.default_rng(seed)
    J, t, gt = persp_config(rng)
    rep = persp_reproj_loss(J, t, gt, K_FULL)
    fd = central_difference(lambda x: persp_reproj_loss(x, t, gt, K_FULL).value, J, h=1e-7)
    return rep, fd


@pytest.mark.parametrize("seed", range(5))
def test_weak_gradient(seed):
    rep, fd = check_weak_gradient(seed)
    np.testing.assert_allclose(rep.grad("weak"), fd, rtol=1e-5)
    assert rep.blocked == frozenset(BLOCKS) - {"weak"}
    assert all(rep.grad(b) is None for b in rep.blocked)


@pytest.mark.parametrize("seed", range(5))
def test_persp_gradient(seed):
    rep, fd = check_persp_gradient(seed)
    np.testing.assert_allclose(rep.grad("joints3d"), fd, rtol=1e-5, atol=1e-6 * np.abs(fd).max())
    assert "translation" in rep.blocked and rep.grad("translation") is None


def test_weak_loss_value():
    J = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 5.0]])
    w = WeakPerspective(1.0)
    gt = weak_project(J, w, K_CROP) + [[1.0, -2.0], [0.0, 4.0]]
    rep = weak_reproj_loss(J, w, gt, [1.0, 2.0], K_CROP)
    assert rep.value == pytest.approx(3.0 + 2.0)


def test_weak_loss_validates_weights():
    J, w, gt, d = weak_config(np.random.default_rng(0))
    with pytest.raises(ValueError):
        weak_reproj_loss(J, w, gt, np.full(24, 0.05), K_CROP)
    with pytest.raises(ShapeMismatch):
        weak_reproj_loss(J, w, gt, d[:-1], K_CROP)
    with pytest.raises(ShapeMismatch):
        weak_reproj_loss(J, w, gt[:-1], d, K_CROP)


def test_zero_loss_at_truth():
    J, t, _ = persp_config(np.random.default_rng(1))
    rep = persp_reproj_loss(J, t, perspective_project(J, t, K_FULL), K_FULL)
    assert rep.value == 0.0
    np.testing.assert_array_equal(rep.grad("joints3d"), 0.0)


def _images(rng, shape=(6, 7)):
    part = rng.integers(-1, 3, shape)
    cov = part >= 0
    iuv = np.zeros(shape + (3,))
    iuv[cov, 0] = part[cov] + 1
    iuv[cov, 1:] = rng.random((cov.sum(), 2))
    dist = np.where(cov, rng.uniform(0.8, 1.5, shape), 0.0)
    return {"iuv": iuv, "distortion": dist, "Tz": rng.uniform(1, 5)}


def test_translation_losses_gradients():
    rng = np.random.default_rng(7)
    pred, gt = _images(rng), _images(rng)
    lam = LossWeights(iuv=0.5, distortion=2.0, tz=3.0)
    rep = translation_losses(pred, gt, lam)
    assert rep.blocked == frozenset(BLOCKS) - {"translation"}
    for key in ("iuv", "distortion"):
        fd = central_difference(lambda x: translation_losses({**pred, key: x}, gt, lam).value, pred[key], 1e-6)
        # only pixels covered in either image take part
        np.testing.assert_allclose(rep.grads[key], fd, atol=1e-7)
    assert rep.grads["translation"][2] == pytest.approx(3.0 * np.sign(pred["Tz"] - gt["Tz"]))


def test_translation_losses_identical_is_zero():
    img = _images(np.random.default_rng(3))
    assert translation_losses(img, img).value == 0.0


def test_mesh_losses():
    rng = np.random.default_rng(2)
    pred = {"vertices": rng.normal(size=(10, 3)), "joints3d": rng.normal(size=(4, 3))}
    gt = {"vertices": rng.normal(size=(10, 3)), "joints3d": rng.normal(size=(4, 3))}
    lam = LossWeights(vertices=2.0, joints3d=0.5)
    rep = mesh_losses(pred, gt, lam)
    expect = 2.0 * np.abs(pred["vertices"] - gt["vertices"]).sum() / 10 + 0.5 * np.abs(pred["joints3d"] - gt["joints3d"]).sum() / 4
    assert rep.value == pytest.approx(expect)
    fd = central_difference(lambda x: mesh_losses({**pred, "vertices": x}, gt, lam).value, pred["vertices"])
    np.testing.assert_allclose(rep.grads["vertices"], fd, rtol=1e-5)
    assert rep.blocked == {"weak", "translation"}


def test_weights_from_json(tmp_path):
    p = tmp_path / "w.json"
    p.write_text(json.dumps({"weights": {"tz": 2.0, "joints2d": 0.1}}))
    lam = LossWeights.from_json(p)
    assert lam.tz == 2.0 and lam.joints2d == 0.1 and lam.iuv == 1.0
    with pytest.raises(ValueError):
        LossWeights.from_dict({"bogus": 1})


def test_report_json_roundtrip():
    rep, _ = check_weak_gradient(0)
    d = json.loads(rep.to_json())
    assert d["value"] == rep.value
    assert d["blocked"] == sorted(rep.blocked)
    assert list(d["grads"]) == ["weak"]


def test_tz_term_and_weight_linearity():
    img = _images(np.random.default_rng(5))
    off = {**img, "Tz": img["Tz"] + 0.5}
    only_z = LossWeights(iuv=0.0, distortion=0.0, tz=1.0)
    assert translation_losses(off, img, only_z).value == pytest.approx(0.5)
    other = _images(np.random.default_rng(6))
    one = translation_losses(other, img, LossWeights(iuv=0.0, distortion=1.0, tz=0.0)).value
    two = translation_losses(other, img, LossWeights(iuv=0.0, distortion=2.0, tz=0.0)).value
    assert two == 2 * one
