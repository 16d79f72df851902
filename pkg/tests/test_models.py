import numpy as np
import pytest

from bootood.errors import CorruptHeaderError, DimMismatchError, DimensionMismatchError
from bootood.models import (
    SGD,
    BackboneParams,
    RadiusHeadParams,
    backbone_backward,
    backbone_forward,
    clip_grad_norm,
    init_model,
    radius_head_backward,
    radius_head_forward,
    read_checkpoint,
    sgd_step,
    write_checkpoint,
)
from bootood.numeric import SeededRng, finite_diff_grad, relative_error


def test_init_shapes_and_parameter_order():
    m = init_model(5, 3, hidden=(7, 6), feature_dim=4, K=2, seed=0)
    names = list(m.named_parameters())
    assert names == [
        "backbone.0.weight", "backbone.0.bias", "backbone.1.weight", "backbone.1.bias",
        "backbone.2.weight", "backbone.2.bias", "classifier.weight", "radius_head.weight", "radius_head.bias",
    ]
    assert m.W.shape == (3, 4)
    assert m.head.weight.shape == (2, 4)
    assert m.features(np.zeros((2, 5))).shape == (2, 4)


def test_backbone_layer_mismatch_rejected():
    with pytest.raises(DimensionMismatchError):
        BackboneParams([np.zeros((3, 2)), np.zeros((2, 4))], [np.zeros(3), np.zeros(2)])


def test_backbone_backward_matches_fd(rng):
    m = init_model(4, 3, hidden=(5,), feature_dim=3, seed=3)
    x = rng.normal(size=(6, 4))
    g = rng.normal(size=(6, 3))
    h, cache = backbone_forward(m.backbone, x)
    dws, dbs, dx = backbone_backward(m.backbone, cache, g)
    for li in range(len(dws)):
        def f(w, li=li):
            ws = list(m.backbone.weights)
            ws[li] = w
            return float(np.sum(backbone_forward(BackboneParams(ws, m.backbone.biases), x)[0] * g))
        assert relative_error(dws[li], finite_diff_grad(f, m.backbone.weights[li]), floor=1e-6) < 1e-6
    fx = lambda xx: float(np.sum(backbone_forward(m.backbone, xx)[0] * g))
    assert relative_error(dx, finite_diff_grad(fx, x), floor=1e-6) < 1e-6


def test_radius_head_backward_matches_fd(rng):
    head = RadiusHeadParams(rng.normal(size=(3, 4)), rng.normal(size=3))
    h = rng.normal(size=(5, 4))
    g = rng.normal(size=(5, 3))
    dW, db, dh = radius_head_backward(head, h, g)
    assert np.allclose(dW, finite_diff_grad(lambda w: float(np.sum(radius_head_forward(RadiusHeadParams(w, head.bias), h) * g)), head.weight))
    assert np.allclose(db, g.sum(axis=0))
    assert np.allclose(dh, finite_diff_grad(lambda hh: float(np.sum(radius_head_forward(head, hh) * g)), h))


def test_sgd_step_momentum_and_decay():
    p = {"a": np.array([1.0])}
    g = {"a": np.array([0.5])}
    buf = {}
    p = sgd_step(p, g, lr=0.1, momentum=0.9, weight_decay=0.1, buffers=buf)
    # first step: buf = g + wd*p = 0.6
    assert p["a"][0] == pytest.approx(1.0 - 0.06)
    p = sgd_step(p, g, lr=0.1, momentum=0.9, weight_decay=0.1, buffers=buf)
    expected_buf = 0.9 * 0.6 + (0.5 + 0.1 * 0.94)
    assert p["a"][0] == pytest.approx(0.94 - 0.1 * expected_buf)


def test_sgd_uses_head_learning_rate():
    m = init_model(3, 2, hidden=(4,), feature_dim=3, K=2, seed=0)
    before = m.copy()
    grads = {k: np.ones_like(v) for k, v in m.named_parameters().items()}
    SGD(lr=0.1, head_lr=1.0, momentum=0.0, weight_decay=0.0).step(m, grads)
    assert np.allclose(before.W - m.W, 0.1)
    assert np.allclose(before.head.weight - m.head.weight, 1.0)


def test_clip_grad_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_grad_norm(g, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)
    g = {"a": np.array([0.3])}
    clip_grad_norm(g, 1.0)
    assert g["a"][0] == 0.3


def test_checkpoint_round_trip(tmp_path):
    m = init_model(4, 3, hidden=(5, 5), feature_dim=3, K=2, rng=SeededRng(2))
    path = tmp_path / "m.bin"
    write_checkpoint(path, m, {"extra": np.arange(3.0)}, {"note": "x"})
    m2, extra, meta = read_checkpoint(path)
    for (k, a), (k2, b) in zip(m.named_parameters().items(), m2.named_parameters().items()):
        assert k == k2 and np.array_equal(a, b)
    assert np.array_equal(extra["extra"], np.arange(3.0))
    assert meta["note"] == "x"


def test_checkpoint_corruption_detected(tmp_path):
    m = init_model(4, 3, hidden=(5,), feature_dim=3, seed=0)
    path = tmp_path / "m.bin"
    write_checkpoint(path, m)
    data = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(CorruptHeaderError):
        read_checkpoint(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(data[:-5])
    with pytest.raises((CorruptHeaderError, DimMismatchError)):
        read_checkpoint(tmp_path / "short.bin")
    (tmp_path / "long.bin").write_bytes(data + b"\0")
    with pytest.raises((CorruptHeaderError, DimMismatchError)):
        read_checkpoint(tmp_path / "long.bin")
