"""Detection mAP / recall and segmentation mIoU."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .network.detect import box_iou


@dataclass
class MapResult:
    map: float | None
    recall: float | None
    per_class_ap: dict = field(default_factory=dict)
    num_gt: int = 0

    @property
    def has_ground_truth(self) -> bool:
        return self.num_gt > 0


def _gt_tuple(g):
    c, cx, cy, w, h = g
    return int(c), (float(cx), float(cy), float(w), float(h))


def compute_map(preds, gts, iou_thresh: float = 0.5) -> MapResult:
    """All-point interpolated AP per class, averaged over classes with ground truth.

    ``preds[i]`` is a list of :class:`Detection` for image ``i``; ``gts[i]`` a
    list of ``(class_id, cx, cy, w, h)``. Detections are ranked by descending
    score and greedily matched to the best-IoU ground truth of their class;
    a ground truth can be matched once.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction lists for {len(gts)} images")
    gt_by = {}
    for img, glist in enumerate(gts):
        for g in glist:
            c, box = _gt_tuple(g)
            gt_by.setdefault((img, c), []).append(box)
    n_gt = {c: 0 for c in sorted({c for _, c in gt_by})}
    for (img, c), boxes in gt_by.items():
        n_gt[c] += len(boxes)
    total_gt = sum(n_gt.values())
    if total_gt == 0:
        return MapResult(None, None, {}, 0)

    ranked = sorted(
        ((d.score, img, d) for img, dl in enumerate(preds) for d in dl),
        key=lambda t: (-t[0], t[1], t[2].class_id, t[2].box),
    )
    matched = set()
    hits: dict[int, list[bool]] = {c: [] for c in n_gt}
    for _, img, d in ranked:
        if d.class_id not in n_gt:
            continue
        cands = gt_by.get((img, d.class_id), [])
        best, best_iou = -1, -1.0
        for k, g in enumerate(cands):
            iou = box_iou(d.box, g)
            if iou > best_iou:
                best, best_iou = k, iou
        tp = best >= 0 and best_iou >= iou_thresh and (img, d.class_id, best) not in matched
        if tp:
            matched.add((img, d.class_id, best))
        hits[d.class_id].append(tp)

    per_class = {c: _average_precision(hits[c], n_gt[c]) for c in n_gt}
    return MapResult(float(np.mean(list(per_class.values()))), len(matched) / total_gt, per_class, total_gt)


def _average_precision(hits, n_gt) -> float:
    if not hits:
        return 0.0
    tp = np.cumsum(hits, dtype=np.float64)
    k = np.arange(1, len(hits) + 1, dtype=np.float64)
    recall = tp / n_gt
    precision = tp / k
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    drecall = np.diff(np.concatenate([[0.0], recall]))
    return float((drecall * envelope).sum())


def compute_miou(pred_mask, gt_mask) -> float:
    """Mean IoU over {background, foreground}; classes absent from both are skipped."""
    p = np.asarray(pred_mask)
    g = np.asarray(gt_mask)
    if p.shape != g.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {g.shape}", dim="shape")
    if p.size == 0:
        raise ShapeError("empty masks", dim="shape")
    ious = []
    for c in (0, 1):
        pc, gc = p == c, g == c
        union = np.count_nonzero(pc | gc)
        if union:
            ious.append(np.count_nonzero(pc & gc) / union)
    return float(np.mean(ious))
