"""Anchor decoding, its algebraic inverse, box IoU and greedy NMS."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ANCHORS_PER_CELL, DET_STRIDES, ModelConfig

LOGIT_CLAMP = 4.0


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: tuple  # (cx, cy, w, h) in input pixels

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.box[2] <= 0 or self.box[3] <= 0:
            raise ValueError(f"box {self.box} has nonpositive size")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def split_anchor_channels(det_map, num_classes):
    """``(n, 3*(5+C), h, w)`` -> ``(n, 3, 5+C, h, w)`` view."""
    n, _, h, w = det_map.shape
    return det_map.reshape(n, ANCHORS_PER_CELL, 5 + num_classes, h, w)


def decode_boxes(t, stride, anchors):
    """Decode offsets ``t`` of shape ``(3, 4, h, w)`` to ``(cx, cy, w, h)`` arrays."""
    t = t.astype(np.float64)
    h, w = t.shape[2:]
    jj = np.arange(w)[None, None, :]
    ii = np.arange(h)[None, :, None]
    aw = np.array([a[0] for a in anchors])[:, None, None]
    ah = np.array([a[1] for a in anchors])[:, None, None]
    cx = (_sigmoid(t[:, 0]) + jj) * stride
    cy = (_sigmoid(t[:, 1]) + ii) * stride
    bw = aw * np.exp(np.clip(t[:, 2], -LOGIT_CLAMP, LOGIT_CLAMP))
    bh = ah * np.exp(np.clip(t[:, 3], -LOGIT_CLAMP, LOGIT_CLAMP))
    return cx, cy, bw, bh


def encode_box(box, cell, stride, anchor, eps=1e-9):
    """Offsets ``(tx, ty, tw, th)`` that decode back to ``box`` at ``cell=(i, j)``."""
    cx, cy, w, h = box
    i, j = cell
    fx = min(max(cx / stride - j, eps), 1 - eps)
    fy = min(max(cy / stride - i, eps), 1 - eps)
    return (
        math.log(fx / (1 - fx)),
        math.log(fy / (1 - fy)),
        math.log(w / anchor[0]),
        math.log(h / anchor[1]),
    )


def decode_detections(raw, config: ModelConfig, conf_thresh: float, batch_index: int = 0) -> list[Detection]:
    C = config.num_classes
    out = []
    for det_map, stride in zip(raw.det, DET_STRIDES):
        a = split_anchor_channels(det_map, C)[batch_index].astype(np.float64)
        cx, cy, bw, bh = decode_boxes(a[:, :4], stride, config.anchors(stride))
        obj = _sigmoid(a[:, 4])
        cls = _sigmoid(a[:, 5:])
        best = cls.argmax(axis=1)
        score = obj * np.take_along_axis(cls, best[:, None], axis=1)[:, 0]
        for k, i, j in zip(*np.nonzero(score >= conf_thresh)):
            out.append(Detection(int(best[k, i, j]), float(score[k, i, j]),
                                 (float(cx[k, i, j]), float(cy[k, i, j]), float(bw[k, i, j]), float(bh[k, i, j]))))
    return out


def box_iou(a, b) -> float:
    """IoU of two ``(cx, cy, w, h)`` boxes."""
    ax0, ax1 = a[0] - a[2] / 2, a[0] + a[2] / 2
    ay0, ay1 = a[1] - a[3] / 2, a[1] + a[3] / 2
    bx0, bx1 = b[0] - b[2] / 2, b[0] + b[2] / 2
    by0, by1 = b[1] - b[3] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def nms(dets, iou_thresh: float) -> list[Detection]:
    """Greedy per-class suppression; survivors come out in ranking order."""
    if not (0.0 < iou_thresh <= 1.0):
        raise ValueError(f"iou_thresh must lie in (0, 1], got {iou_thresh}")
    order = sorted(dets, key=lambda d: (-d.score, d.class_id, d.box[0], d.box[1]))
    kept: list[Detection] = []
    by_class: dict[int, list] = {}
    for d in order:
        same = by_class.setdefault(d.class_id, [])
        if all(box_iou(d.box, k.box) < iou_thresh for k in same):
            same.append(d)
            kept.append(d)
    return kept
