import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtpn import engine as E
from mtpn.errors import ConfigError, ShapeError
from mtpn.network import (
    DET_STRIDES,
    Detection,
    ModelConfig,
    RawPredictions,
    backbone_forward,
    box_iou,
    build_model,
    decode_detections,
    encode_box,
    fuse_pyramid,
    heads_forward,
    nms,
    parse_resolution,
)
from mtpn.network.arch import pyramid_channels
from mtpn.network.detect import decode_boxes

from conftest import tiny_config
from oracles import nms_oracle


def test_config_validation():
    with pytest.raises(ConfigError) as exc:
        ModelConfig(backbone="vgg")
    assert exc.value.field == "backbone"
    with pytest.raises(ConfigError):
        ModelConfig(input_res=(100, 640))
    with pytest.raises(ConfigError):
        ModelConfig(aspect_ratios=(1.0, 1.0, 2.0))
    with pytest.raises(ConfigError):
        ModelConfig(aspect_ratios=(0.5, -1.0, 2.0))
    with pytest.raises(ConfigError):
        ModelConfig(num_classes=0)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"backbone": "resnet50", "depth": 3})


def test_config_round_trip_and_replace():
    cfg = ModelConfig(backbone="resnet50", num_classes=4)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    m = cfg.replace(backbone="mobilenetv2")
    assert m.fusion_width == ModelConfig(backbone="mobilenetv2").fusion_width
    assert parse_resolution("384x640") == (384, 640)
    with pytest.raises(ConfigError):
        parse_resolution("384by640")


def test_anchor_geometry():
    cfg = ModelConfig()
    for s in DET_STRIDES:
        for (aw, ah), r in zip(cfg.anchors(s), cfg.aspect_ratios):
            assert math.isclose(aw * ah, (4 * s) ** 2)
            assert math.isclose(aw / ah, r)


def test_backbone_c5_shape():
    m = build_model(ModelConfig(backbone="mobilenetv2", input_res=(256, 384)), seed=0)
    pyr = backbone_forward(m, np.zeros((1, 3, 256, 384), np.float32))
    assert pyr.c5.shape == (1, pyramid_channels("mobilenetv2")["c5"], 8, 12)
    for name in ("c2", "c3", "c4", "c5"):
        assert np.isfinite(getattr(pyr, name)).all()


@pytest.mark.parametrize("backbone", ["mobilenetv2", "resnet50"])


def test_pyramid_doubles_with_input(backbone):
    m = build_model(tiny_config(backbone), seed=0)
    a = backbone_forward(m, np.zeros((1, 3, 64, 96), np.float32))
    b = backbone_forward(m, np.zeros((1, 3, 128, 192), np.float32))
    for name in ("c2", "c3", "c4", "c5"):
        ha, wa = getattr(a, name).shape[2:]
        assert getattr(b, name).shape[2:] == (2 * ha, 2 * wa)


def test_backbone_rejects_bad_resolution(tiny_model):
    with pytest.raises(ShapeError):
        backbone_forward(tiny_model, np.zeros((1, 3, 60, 96), np.float32))
    with pytest.raises(ShapeError):
        backbone_forward(tiny_model, np.zeros((1, 1, 64, 96), np.float32))


def test_full_resolution_head_shapes():
    m = build_model(ModelConfig(backbone="mobilenetv2", num_classes=10), seed=0)
    x = np.random.default_rng(0).random((1, 3, 384, 640), dtype=np.float32)
    raw = m.forward(x)
    assert raw.det[0].shape == (1, 45, 48, 80)
    assert raw.det[1].shape == (1, 45, 24, 40) and raw.det[2].shape == (1, 45, 12, 20)
    assert raw.drivable.shape == (1, 2, 384, 640) and raw.lane.shape == (1, 2, 384, 640)
    for seg in (raw.drivable, raw.lane):
        np.testing.assert_allclose(E.softmax_channels(seg).sum(axis=1), 1.0, atol=1e-5)


def test_build_determinism():
    cfg = tiny_config()
    a, b = build_model(cfg, seed=3), build_model(cfg, seed=3)
    assert list(a.parameters) == list(b.parameters)
    assert all(a.parameters[k].tobytes() == b.parameters[k].tobytes() for k in a.parameters)
    c = build_model(cfg, seed=4)
    assert any(a.parameters[k].tobytes() != c.parameters[k].tobytes() for k in a.parameters)


def test_all_parameters_trainable_and_grouped(tiny_model):
    m = tiny_model
    assert m.trainable_mask == set(m.parameters) - m.buffers
    groups = {m.group_of(k) for k in m.parameters}
    assert groups == {"backbone", "fusion", "det_head", "seg_heads"}
    assert all(v.dtype == np.float32 for v in m.parameters.values())


@pytest.mark.parametrize("backbone", ["mobilenetv2", "resnet50"])


def test_forward_determinism(backbone):
    m = build_model(tiny_config(backbone), seed=1)
    x = np.random.default_rng(1).random((1, 3, 64, 96), dtype=np.float32)
    a, b = m.forward(x), m.forward(x)
    for u, v in zip(a.det + [a.drivable, a.lane], b.det + [b.drivable, b.lane]):
        assert u.tobytes() == v.tobytes()


def test_fully_convolutional_shapes(tiny_model):
    cfg = tiny_model.config
    for h, w in [(32, 32), (64, 160), (96, 64)]:
        raw = tiny_model.forward(np.zeros((1, 3, h, w), np.float32))
        for d, s in zip(raw.det, DET_STRIDES):
            assert d.shape == (1, cfg.det_channels, h // s, w // s)
        assert raw.drivable.shape == raw.lane.shape == (1, 2, h, w)


def test_staged_forward_matches_forward(tiny_model):
    x = np.random.default_rng(2).random((1, 3, 64, 96), dtype=np.float32)
    pyr = backbone_forward(tiny_model, x)
    fused = fuse_pyramid(tiny_model, pyr)
    assert all(f.shape[1] == tiny_model.config.fusion_width for f in fused)
    raw = heads_forward(tiny_model, fused, pyr.c2)
    ref = tiny_model.forward(x)
    assert raw.drivable.tobytes() == ref.drivable.tobytes()
    with pytest.raises(ShapeError):
        heads_forward(tiny_model, fused, pyr.c3)


def test_fusion_zero_weight_input_is_ignored():
    """With every merge weight on the coarse path zeroed, the finest output ignores c5."""
    m = build_model(tiny_config(), seed=0)
    P = m.parameters
    for k in P:
        if k.endswith("td4.merge_weight") or k.endswith("out3.merge_weight"):
            P[k][1] = 0.0
    rng = np.random.default_rng(3)
    pyr = backbone_forward(m, rng.random((1, 3, 64, 96), dtype=np.float32))
    a = fuse_pyramid(m, pyr)[0]
    pyr.c5 = pyr.c5 + rng.standard_normal(pyr.c5.shape).astype(np.float32)
    b = fuse_pyramid(m, pyr)[0]
    np.testing.assert_array_equal(a, b)


def test_objectness_prior(tiny_model):
    raw = tiny_model.forward(np.zeros((1, 3, 64, 96), np.float32))
    assert decode_detections(raw, tiny_model.config, 0.9) == []


def _zero_raw(cfg, h=64, w=96):
    det = [np.zeros((1, cfg.det_channels, h // s, w // s), np.float32) for s in DET_STRIDES]
    return RawPredictions(det, np.zeros((1, 2, h, w)), np.zeros((1, 2, h, w)))


def test_decode_zero_logits():
    cfg = ModelConfig(aspect_ratios=(1.0, 0.5, 2.0), anchor_base_scale=2.0, num_classes=2)
    assert cfg.anchors(8)[0] == (16.0, 16.0)
    dets = decode_detections(_zero_raw(cfg), cfg, 0.0)
    d = next(d for d in dets if d.box[:2] == (4.0, 4.0) and d.box[2:] == (16.0, 16.0))
    assert d.score == pytest.approx(0.25)
    assert decode_detections(_zero_raw(cfg), cfg, 1.0) == []


def test_decode_clamps_size():
    t = np.zeros((3, 4, 1, 1))
    t[:, 2] = 50.0
    _, _, bw, _ = decode_boxes(t, 8, [(16.0, 16.0)] * 3)
    np.testing.assert_allclose(bw, 16.0 * math.exp(4.0))


@settings(max_examples=200, deadline=None)
@given(
    stride=st.sampled_from(DET_STRIDES),
    cx=st.floats(1.0, 639.0), cy=st.floats(1.0, 383.0),
    aw=st.floats(4.0, 256.0), ah=st.floats(4.0, 256.0),
    lw=st.floats(-3.9, 3.9), lh=st.floats(-3.9, 3.9),
)


def test_encode_decode_round_trip(stride, cx, cy, aw, ah, lw, lh):
    i, j = int(cy // stride), int(cx // stride)
    fx, fy = cx / stride - j, cy / stride - i
    if min(fx, fy, 1 - fx, 1 - fy) < 1e-6:
        return  # centre on a cell boundary sits outside the open sigmoid range
    box = (cx, cy, aw * math.exp(lw), ah * math.exp(lh))
    t = np.zeros((3, 4, i + 1, j + 1))
    t[0, :, i, j] = encode_box(box, (i, j), stride, (aw, ah))
    dec = decode_boxes(t, stride, [(aw, ah)] * 3)
    got = [dec[k][0, i, j] for k in range(4)]
    np.testing.assert_allclose(got, box, atol=1e-4, rtol=0)


def test_box_iou():
    assert box_iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert box_iou((0, 0, 2, 2), (10, 10, 2, 2)) == 0.0
    assert box_iou((0, 0, 2, 2), (1, 0, 2, 2)) == pytest.approx(1 / 3)


def test_detection_validation():
    with pytest.raises(ValueError):
        Detection(0, 1.2, (0, 0, 1, 1))
    with pytest.raises(ValueError):
        Detection(0, 0.5, (0, 0, 0, 1))


def test_nms_examples():
    a = Detection(0, 0.9, (10, 10, 8, 8))
    b = Detection(0, 0.8, (10, 10, 8, 8))
    assert nms([b, a], 0.5) == [a]
    far = [Detection(0, 0.5, (10 + 20 * k, 10, 8, 8)) for k in range(4)]
    assert sorted(nms(far, 0.5), key=lambda d: d.box) == far
    other_class = Detection(1, 0.7, (10, 10, 8, 8))
    assert nms([a, b, other_class], 0.5) == [a, other_class]
    with pytest.raises(ValueError):
        nms([a], 0.0)


def test_nms_matches_exhaustive_oracle():
    rng = np.random.default_rng(9)
    for _ in range(300):
        n = int(rng.integers(0, 11))
        dets = [Detection(int(rng.integers(0, 2)), float(rng.integers(0, 5) / 4),
                          (float(rng.uniform(0, 40)), float(rng.uniform(0, 40)),
                           float(rng.uniform(4, 20)), float(rng.uniform(4, 20)))) for _ in range(n)]
        thresh = float(rng.uniform(0.1, 1.0))
        got = nms(dets, thresh)
        assert got == nms_oracle(dets, thresh)
        for c in (0, 1):
            same = [d for d in got if d.class_id == c]
            assert all(box_iou(p.box, q.box) < thresh for k, p in enumerate(same) for q in same[k + 1:])
            scores = [d.score for d in same]
            assert scores == sorted(scores, reverse=True)
