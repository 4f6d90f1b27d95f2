"""Composite multi-task loss, anchor target assignment and loss gradients.

Loss functions return their value together with the gradient with respect to
the raw network outputs; the trainer seeds the recorded tape with those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .network.config import ANCHORS_PER_CELL, DET_STRIDES, ModelConfig, check_resolution
from .network.detect import LOGIT_CLAMP, encode_box, split_anchor_channels


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("alpha and beta cannot both be zero")


@dataclass(frozen=True)
class DetTermWeights:
    objectness: float = 1.0
    classification: float = 1.0
    box: float = 1.0
    # Weight on the positive side of the objectness BCE; one positive anchor
    # per object is otherwise drowned out by thousands of negatives.
    obj_pos_weight: float = 1.0


@dataclass
class LossBreakdown:
    l_det: float
    l_seg: float
    alpha: float
    beta: float
    l_total: float
    det_components: tuple = (0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# target assignment


@dataclass
class TargetAssignment:
    """Per-scale targets with a leading batch axis.

    For scale ``s`` with grid ``(h, w)``: ``objectness[s]`` is ``(n, 3, h, w)``,
    ``box[s]`` the regression offsets ``(n, 3, 4, h, w)``, ``gt_box[s]`` the
    matched ground truth ``(n, 3, 4, h, w)``, ``classes[s]`` the one-hot
    ``(n, 3, C, h, w)`` and ``positive[s]`` a boolean ``(n, 3, h, w)`` mask.
    """

    objectness: list
    box: list
    gt_box: list
    classes: list
    positive: list
    positives: list = field(default_factory=list)  # (batch, scale, anchor, i, j, gt index)

    @property
    def num_positive(self) -> int:
        return int(sum(p.sum() for p in self.positive))


def shape_iou(wa, ha, wb, hb) -> float:
    inter = min(wa, wb) * min(ha, hb)
    return inter / (wa * ha + wb * hb - inter)


def assign_targets(gt_boxes, config: ModelConfig, resolution=None) -> TargetAssignment:
    """Assign every ground truth ``(class_id, cx, cy, w, h)`` to one anchor-cell.

    The anchor with the highest shape IoU wins (ties: finer scale, then lower
    anchor index); the cell is the one containing the box centre. If that
    slot is already taken the next-best anchor is used.
    """
    H, W = check_resolution(config.input_res if resolution is None else resolution)
    C = config.num_classes
    grids = [(H // s, W // s) for s in DET_STRIDES]
    obj = [np.zeros((1, ANCHORS_PER_CELL, h, w)) for h, w in grids]
    box = [np.zeros((1, ANCHORS_PER_CELL, 4, h, w)) for h, w in grids]
    gtb = [np.zeros((1, ANCHORS_PER_CELL, 4, h, w)) for h, w in grids]
    cls = [np.zeros((1, ANCHORS_PER_CELL, C, h, w)) for h, w in grids]
    pos = [np.zeros((1, ANCHORS_PER_CELL, h, w), dtype=bool) for h, w in grids]
    positives = []
    for g, (c, cx, cy, bw, bh) in enumerate(gt_boxes):
        if not (bw > 0 and bh > 0):
            raise ValueError(f"ground truth {g} has degenerate size {bw}x{bh}")
        if not (0 <= c < C):
            raise ValueError(f"ground truth {g} has class {c} outside [0, {C})")
        cands = []
        for si, s in enumerate(DET_STRIDES):
            for a, (aw, ah) in enumerate(config.anchors(s)):
                cands.append((-shape_iou(bw, bh, aw, ah), si, a))
        cands.sort()
        for _, si, a in cands:
            s = DET_STRIDES[si]
            gh, gw = grids[si]
            i = min(int(cy // s), gh - 1)
            j = min(int(cx // s), gw - 1)
            if pos[si][0, a, i, j]:
                continue
            pos[si][0, a, i, j] = True
            obj[si][0, a, i, j] = 1.0
            cls[si][0, a, c, i, j] = 1.0
            gtb[si][0, a, :, i, j] = (cx, cy, bw, bh)
            box[si][0, a, :, i, j] = encode_box((cx, cy, bw, bh), (i, j), s, config.anchors(s)[a])
            positives.append((0, si, a, i, j, g))
            break
        else:
            raise ValueError(f"ground truth {g}: every candidate anchor-cell is already taken")
    return TargetAssignment(obj, box, gtb, cls, pos, positives)


def stack_targets(targets) -> TargetAssignment:
    """Concatenate single-image assignments along the batch axis."""
    cat = lambda attr: [np.concatenate([getattr(t, attr)[s] for t in targets]) for s in range(len(DET_STRIDES))]
    positives = [(b, *p[1:]) for b, t in enumerate(targets) for p in t.positives]
    return TargetAssignment(cat("objectness"), cat("box"), cat("gt_box"), cat("classes"), cat("positive"), positives)


# ---------------------------------------------------------------------------
# detection loss


def _softplus(x):
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def _bce_with_logits(x, t, pos_weight=1.0):
    return pos_weight * t * _softplus(-x) + (1 - t) * _softplus(x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _iou_and_grad(pred, gt):
    """IoU of matched box arrays ``(4, k)`` and its gradient w.r.t. ``pred``."""
    px, py, pw, ph = pred
    gx, gy, gw, gh = gt
    x1, x2, y1, y2 = px - pw / 2, px + pw / 2, py - ph / 2, py + ph / 2
    gx1, gx2, gy1, gy2 = gx - gw / 2, gx + gw / 2, gy - gh / 2, gy + gh / 2
    iw_raw = np.minimum(x2, gx2) - np.maximum(x1, gx1)
    ih_raw = np.minimum(y2, gy2) - np.maximum(y1, gy1)
    iw, ih = np.maximum(iw_raw, 0), np.maximum(ih_raw, 0)
    inter = iw * ih
    union = pw * ph + gw * gh - inter
    iou = inter / union

    d_inter = (union + inter) / union**2
    d_area = -inter / union**2
    on_w, on_h = iw_raw > 0, ih_raw > 0
    diw_dx2 = np.where(on_w & (x2 < gx2), 1.0, 0.0)
    diw_dx1 = np.where(on_w & (x1 > gx1), -1.0, 0.0)
    dih_dy2 = np.where(on_h & (y2 < gy2), 1.0, 0.0)
    dih_dy1 = np.where(on_h & (y1 > gy1), -1.0, 0.0)
    d_px = d_inter * ih * (diw_dx1 + diw_dx2)
    d_py = d_inter * iw * (dih_dy1 + dih_dy2)
    d_pw = d_inter * ih * 0.5 * (diw_dx2 - diw_dx1) + d_area * ph
    d_ph = d_inter * iw * 0.5 * (dih_dy2 - dih_dy1) + d_area * pw
    return iou, np.stack([d_px, d_py, d_pw, d_ph])


@dataclass
class DetectionLoss:
    l_det: float
    components: tuple  # (objectness, classification, box), already term-weighted
    grads: list  # d l_det / d det_map, one per scale


def detection_loss(det_maps, targets: TargetAssignment, config: ModelConfig,
                   term_weights: DetTermWeights = DetTermWeights()) -> DetectionLoss:
    C = config.num_classes
    if len(det_maps) != len(DET_STRIDES):
        raise ShapeError(f"expected {len(DET_STRIDES)} detection maps, got {len(det_maps)}", dim="scales")
    for m, t in zip(det_maps, targets.objectness):
        want = (t.shape[0], ANCHORS_PER_CELL * (5 + C), t.shape[2], t.shape[3])
        if m.shape != want:
            raise ShapeError(f"detection map shape {m.shape} does not match targets {want}", dim="det")

    n_all = sum(t.size for t in targets.objectness)
    n_pos = targets.num_positive
    obj_sum = cls_sum = box_sum = 0.0
    grads = []
    for si, (m, s) in enumerate(zip(det_maps, DET_STRIDES)):
        a = split_anchor_channels(m, C).astype(np.float64)
        g = np.zeros_like(a)
        t_obj = targets.objectness[si]
        x_obj = a[:, :, 4]
        pw = term_weights.obj_pos_weight
        obj_sum += _bce_with_logits(x_obj, t_obj, pw).sum()
        sig = _sigmoid(x_obj)
        g[:, :, 4] = term_weights.objectness * (pw * t_obj * (sig - 1) + (1 - t_obj) * sig) / n_all

        pos = targets.positive[si]
        if n_pos and pos.any():
            b, k, i, j = np.nonzero(pos)
            x_cls = a[b, k, 5:, i, j]  # (P_s, C)
            t_cls = targets.classes[si][b, k, :, i, j]
            cls_sum += _bce_with_logits(x_cls, t_cls).sum()
            g[b, k, 5:, i, j] = term_weights.classification * (_sigmoid(x_cls) - t_cls) / (n_pos * C)

            t = a[b, k, :4, i, j].T  # (4, P_s)
            anchors = np.array(config.anchors(s))[k].T  # (2, P_s)
            sx, sy = _sigmoid(t[0]), _sigmoid(t[1])
            tw, th = np.clip(t[2], -LOGIT_CLAMP, LOGIT_CLAMP), np.clip(t[3], -LOGIT_CLAMP, LOGIT_CLAMP)
            pred = np.stack([(sx + j) * s, (sy + i) * s, anchors[0] * np.exp(tw), anchors[1] * np.exp(th)])
            gt = targets.gt_box[si][b, k, :, i, j].T
            iou, d_iou = _iou_and_grad(pred, gt)
            box_sum += (1.0 - iou).sum()
            jac = np.stack([
                s * sx * (1 - sx),
                s * sy * (1 - sy),
                pred[2] * (np.abs(t[2]) < LOGIT_CLAMP),
                pred[3] * (np.abs(t[3]) < LOGIT_CLAMP),
            ])
            g[b, k, :4, i, j] = (term_weights.box * -d_iou * jac / n_pos).T
        grads.append(g.reshape(m.shape).astype(m.dtype))

    l_obj = term_weights.objectness * obj_sum / n_all
    l_cls = term_weights.classification * cls_sum / (n_pos * C) if n_pos else 0.0
    l_box = term_weights.box * box_sum / n_pos if n_pos else 0.0
    comps = (float(l_obj), float(l_cls), float(l_box))
    return DetectionLoss(comps[0] + comps[1] + comps[2], comps, grads)


# ---------------------------------------------------------------------------
# segmentation loss


@dataclass
class SegmentationLoss:
    l_seg: float
    per_head: tuple  # (drivable, lane)
    grads: tuple  # (d/d drivable_map, d/d lane_map)


def _pixel_ce(logits, gt, fg_weight):
    if logits.ndim != 4 or logits.shape[1] != 2:
        raise ShapeError(f"segmentation map must be (n, 2, H, W), got {logits.shape}", dim="c")
    if gt.shape != (logits.shape[0], *logits.shape[2:]):
        raise ShapeError(f"mask shape {gt.shape} does not match map {logits.shape}", dim="h/w")
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("segmentation masks must contain only 0 and 1")
    x = logits.astype(np.float64)
    m = x.max(axis=1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=1))
    gti = gt.astype(np.int64)
    picked = np.take_along_axis(z, gti[:, None], axis=1)[:, 0]
    ce = lse - picked
    w = np.where(gti == 1, fg_weight, 1.0)
    N = ce.size
    loss = float((w * ce).sum() / N)
    p = np.exp(z - lse[:, None])
    onehot = np.stack([gti == 0, gti == 1], axis=1)
    grad = (p - onehot) * (w / N)[:, None]
    return loss, grad


def segmentation_loss(drivable_map, lane_map, drivable_gt, lane_gt, fg_weight: float = 1.0) -> SegmentationLoss:
    ld, gd = _pixel_ce(drivable_map, np.asarray(drivable_gt), fg_weight)
    ll, gl = _pixel_ce(lane_map, np.asarray(lane_gt), fg_weight)
    return SegmentationLoss(0.5 * (ld + ll), (ld, ll),
                            ((0.5 * gd).astype(drivable_map.dtype), (0.5 * gl).astype(lane_map.dtype)))


def total_loss(l_det: float, l_seg: float, weights: LossWeights = LossWeights(), det_components=(0.0, 0.0, 0.0)) -> LossBreakdown:
    if not (math.isfinite(l_det) and math.isfinite(l_seg)):
        raise ValueError(f"non-finite component loss (det={l_det}, seg={l_seg})")
    l_total = weights.alpha * l_det + weights.beta * l_seg
    return LossBreakdown(l_det, l_seg, weights.alpha, weights.beta, l_total, tuple(det_components))
