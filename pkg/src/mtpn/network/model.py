"""Backbones, weighted-fusion neck and task heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import engine as E
from ..errors import ShapeError
from .arch import (
    MOBILENETV2_LAST,
    MOBILENETV2_SETTINGS,
    MOBILENETV2_STEM,
    MOBILENETV2_TAPS,
    RESNET50_STAGES,
    RESNET_EXPANSION,
    RESNET_STEM,
    pyramid_channels,
)
from .config import ANCHORS_PER_CELL, DET_STRIDES, SEG_CLASSES, ModelConfig
from .layers import BatchNorm, Block, Conv, ConvBNAct, init_parameters

FUSION_EPS = 1e-4
OBJECTNESS_PRIOR_BIAS = -4.0

PARAM_GROUPS = ("backbone", "fusion", "det_head", "seg_heads")


# ---------------------------------------------------------------------------
# backbones


class Bottleneck(Block):
    def __init__(self, cin, width, stride):
        super().__init__()
        cout = width * RESNET_EXPANSION
        self.add("conv1", ConvBNAct(cin, width, 1))
        self.add("conv2", ConvBNAct(width, width, 3, stride))
        self.add("conv3", ConvBNAct(width, cout, 1, act=None, zero_gamma=True))
        self.has_down = stride != 1 or cin != cout
        if self.has_down:
            self.add("down", ConvBNAct(cin, cout, 1, stride, act=None))

    def __call__(self, P, x):
        y = self.conv3(P, self.conv2(P, self.conv1(P, x)))
        s = self.down(P, x) if self.has_down else x
        return E.relu(E.add(y, s, label=self.path), label=self.path)


class ResNet50(Block):
    def __init__(self):
        super().__init__()
        self.add("stem", ConvBNAct(3, RESNET_STEM, 7, 2))
        cin = RESNET_STEM
        self.stages = []
        for i, (blocks, width, stride) in enumerate(RESNET50_STAGES):
            stage = Block()
            for b in range(blocks):
                stage.add(str(b), Bottleneck(cin, width, stride if b == 0 else 1))
                cin = width * RESNET_EXPANSION
            self.stages.append(self.add(f"layer{i + 1}", stage))

    def __call__(self, P, x):
        x = self.stem(P, x)
        x = E.maxpool(x, 3, 2, pad=1, label=f"{self.path}.pool")
        feats = []
        for stage in self.stages:
            for _, blk in stage._children:
                x = blk(P, x)
            feats.append(x)
        return feats


class InvertedResidual(Block):
    def __init__(self, cin, cout, stride, t):
        super().__init__()
        hidden = cin * t
        self.use_res = stride == 1 and cin == cout
        self.has_expand = t != 1
        if self.has_expand:
            self.add("expand", ConvBNAct(cin, hidden, 1, act="relu6"))
        self.add("dw", ConvBNAct(hidden, hidden, 3, stride, groups=hidden, act="relu6"))
        self.add("project", ConvBNAct(hidden, cout, 1, act=None, zero_gamma=self.use_res))

    def __call__(self, P, x):
        y = self.expand(P, x) if self.has_expand else x
        y = self.project(P, self.dw(P, y))
        return E.add(x, y, label=self.path) if self.use_res else y


class MobileNetV2(Block):
    def __init__(self):
        super().__init__()
        self.add("stem", ConvBNAct(3, MOBILENETV2_STEM, 3, 2, act="relu6"))
        cin = MOBILENETV2_STEM
        self.rows = []
        for r, (t, c, n, s) in enumerate(MOBILENETV2_SETTINGS):
            row = Block()
            for i in range(n):
                row.add(str(i), InvertedResidual(cin, c, s if i == 0 else 1, t))
                cin = c
            self.rows.append(self.add(f"block{r}", row))
        self.add("last", ConvBNAct(cin, MOBILENETV2_LAST, 1, act="relu6"))

    def __call__(self, P, x):
        x = self.stem(P, x)
        taps = {}
        for r, row in enumerate(self.rows):
            for _, blk in row._children:
                x = blk(P, x)
            if r in MOBILENETV2_TAPS:
                taps[MOBILENETV2_TAPS[r]] = x
        taps["c5"] = self.last(P, x)
        return [taps["c2"], taps["c3"], taps["c4"], taps["c5"]]


# ---------------------------------------------------------------------------
# neck


class FusionNode(Block):
    """Weighted merge of same-resolution inputs followed by a 3x3 conv."""

    def __init__(self, n_inputs, width):
        super().__init__()
        self.param("merge_weight", (n_inputs,), "const", 1.0)
        self.add("conv", ConvBNAct(width, width, 3))

    def merge(self, P, inputs):
        return E.weighted_merge(inputs, P[self.key("merge_weight")], eps=FUSION_EPS, label=self.path)

    def __call__(self, P, inputs):
        return self.conv(P, self.merge(P, inputs))


class FusionRepeat(Block):
    def __init__(self, width):
        super().__init__()
        self.add("td4", FusionNode(2, width))
        self.add("out3", FusionNode(2, width))
        self.add("out4", FusionNode(3, width))
        self.add("out5", FusionNode(2, width))

    def __call__(self, P, p3, p4, p5):
        def up(x, ref):
            return E.resize_bilinear(x, ref.shape[2], ref.shape[3], label=f"{self.path}.up")

        def down(x):
            return E.maxpool(x, 3, 2, pad=1, label=f"{self.path}.down")

        td4 = self.td4(P, [p4, up(p5, p4)])
        o3 = self.out3(P, [p3, up(td4, p3)])
        o4 = self.out4(P, [p4, td4, down(o3)])
        o5 = self.out5(P, [p5, down(o4)])
        return o3, o4, o5


class FusionNeck(Block):
    def __init__(self, chans, width, repeats):
        super().__init__()
        self.add("lat3", ConvBNAct(chans["c3"], width, 1, act=None))
        self.add("lat4", ConvBNAct(chans["c4"], width, 1, act=None))
        self.add("lat5", ConvBNAct(chans["c5"], width, 1, act=None))
        self.reps = [self.add(f"rep{i}", FusionRepeat(width)) for i in range(repeats)]

    def __call__(self, P, c3, c4, c5):
        p3, p4, p5 = self.lat3(P, c3), self.lat4(P, c4), self.lat5(P, c5)
        for rep in self.reps:
            p3, p4, p5 = rep(P, p3, p4, p5)
        return p3, p4, p5


# ---------------------------------------------------------------------------
# heads


class DetectionHead(Block):
    """Shared across scales: two 3x3 conv layers and a 1x1 predictor."""

    def __init__(self, width, num_classes):
        super().__init__()
        per_anchor = 5 + num_classes
        bias = np.zeros(ANCHORS_PER_CELL * per_anchor)
        bias[4::per_anchor] = OBJECTNESS_PRIOR_BIAS
        self.add("conv0", ConvBNAct(width, width, 3))
        self.add("conv1", ConvBNAct(width, width, 3))
        self.add("pred", Conv(width, ANCHORS_PER_CELL * per_anchor, 1, bias=True, bias_init=bias))

    def __call__(self, P, x):
        return self.pred(P, self.conv1(P, self.conv0(P, x)))


class SegmentationHead(Block):
    def __init__(self, width, skip_in, skip_width, seg_width):
        super().__init__()
        self.add("skip", ConvBNAct(skip_in, skip_width, 1))
        self.add("conv0", ConvBNAct(width + skip_width, seg_width, 3))
        self.add("conv1", ConvBNAct(seg_width, seg_width, 3))
        self.add("pred", Conv(seg_width, SEG_CLASSES, 1, bias=True))

    def __call__(self, P, p3_up, c2, out_hw):
        x = E.concat_channels([p3_up, self.skip(P, c2)], label=self.path)
        x = self.pred(P, self.conv1(P, self.conv0(P, x)))
        return E.resize_bilinear(x, out_hw[0], out_hw[1], label=f"{self.path}.up")


# ---------------------------------------------------------------------------
# model


@dataclass
class Pyramid:
    c2: np.ndarray
    c3: np.ndarray
    c4: np.ndarray
    c5: np.ndarray


@dataclass
class RawPredictions:
    det: list  # stride 8, 16, 32 maps of shape (n, 3*(5+C), h/s, w/s)
    drivable: np.ndarray
    lane: np.ndarray


class Network:
    """Block tree for one configuration; holds no parameter values."""

    def __init__(self, config: ModelConfig):
        chans = pyramid_channels(config.backbone)
        self.backbone = (ResNet50() if config.backbone == "resnet50" else MobileNetV2()).bind("backbone")
        self.fusion = FusionNeck(chans, config.fusion_width, config.fusion_repeats).bind("fusion")
        self.det_head = DetectionHead(config.fusion_width, config.num_classes).bind("det_head")
        seg = Block()
        for task in ("drivable", "lane"):
            seg.add(task, SegmentationHead(config.fusion_width, chans["c2"], config.skip_width, config.seg_width))
        self.seg_heads = seg.bind("seg_heads")

    def blocks(self):
        return [self.backbone, self.fusion, self.det_head, self.seg_heads]


@dataclass
class Model:
    config: ModelConfig
    parameters: dict
    trainable_mask: set = field(default_factory=set)

    def __post_init__(self):
        self.net = Network(self.config)

    @property
    def buffers(self) -> set:
        return {k for k in self.parameters if k.rsplit(".", 1)[-1] in BatchNorm.BUFFERS}

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.parameters.values()))

    def group_of(self, name: str) -> str:
        return name.split(".", 1)[0]

    def forward(self, image) -> RawPredictions:
        pyr = backbone_forward(self, image)
        fused = fuse_pyramid(self, pyr)
        return heads_forward(self, fused, pyr.c2, image.shape[2:])

    __call__ = forward


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    config.validate()
    net = Network(config)
    params = init_parameters(net.blocks(), seed)
    model = Model(config, params)
    model.trainable_mask = set(params) - model.buffers
    return model


def backbone_forward(model: Model, image) -> Pyramid:
    E.ops._check4(image, "image")
    n, c, h, w = image.shape
    if c != 3:
        raise ShapeError(f"image must have 3 channels, got {c}", dim="c")
    if h % 32 or w % 32:
        raise ShapeError(f"image size {h}x{w} must be divisible by 32", dim="h" if h % 32 else "w")
    feats = model.net.backbone(model.parameters, image)
    pyr = Pyramid(*feats)
    for name, stride in (("c2", 4), ("c3", 8), ("c4", 16), ("c5", 32)):
        got = getattr(pyr, name).shape[2:]
        if got != (h // stride, w // stride):  # pragma: no cover - architecture invariant
            raise ShapeError(f"{name} has spatial size {got}, expected {(h // stride, w // stride)}")
    return pyr


def fuse_pyramid(model: Model, pyr: Pyramid):
    return model.net.fusion(model.parameters, pyr.c3, pyr.c4, pyr.c5)


def heads_forward(model: Model, fused, skip_c2, out_hw=None) -> RawPredictions:
    P = model.parameters
    p3, p4, p5 = fused
    det = [model.net.det_head(P, p) for p in (p3, p4, p5)]
    if out_hw is None:
        out_hw = (skip_c2.shape[2] * 4, skip_c2.shape[3] * 4)
    if p3.shape[2] * 2 != skip_c2.shape[2] or p3.shape[3] * 2 != skip_c2.shape[3]:
        raise ShapeError(f"skip feature {skip_c2.shape[2:]} is not twice p3 {p3.shape[2:]}", dim="h/w")
    p3_up = E.resize_bilinear(p3, skip_c2.shape[2], skip_c2.shape[3], label="seg_heads.p3_up")
    seg = model.net.seg_heads
    drivable = seg.drivable(P, p3_up, skip_c2, out_hw)
    lane = seg.lane(P, p3_up, skip_c2, out_hw)
    return RawPredictions(det, drivable, lane)


__all__ = [
    "DET_STRIDES", "PARAM_GROUPS", "Model", "Pyramid", "RawPredictions", "backbone_forward",
    "build_model", "fuse_pyramid", "heads_forward",
]
