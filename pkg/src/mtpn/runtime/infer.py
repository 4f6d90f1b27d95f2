"""Single-image inference and overlay rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import engine as E
from ..network.detect import decode_detections, nms
from ..network.model import Model
from ..training.synth import PALETTE
from .fileio import to_rgb8, write_ppm

DRIVABLE_ALPHA = 0.4
LANE_ALPHA = 0.6


@dataclass
class InferenceResult:
    detections: list
    drivable_mask: np.ndarray  # (H, W) uint8
    lane_mask: np.ndarray


def infer(model: Model, image, conf_thresh: float = 0.25, iou_thresh: float = 0.5) -> InferenceResult:
    """Forward, decode, NMS and per-pixel argmax for one ``(1, 3, H, W)`` image."""
    image = np.ascontiguousarray(image, dtype=np.float32)
    with E.no_record():
        raw = model.forward(image)
    dets = nms(decode_detections(raw, model.config, conf_thresh), iou_thresh)
    drivable = raw.drivable[0].argmax(axis=0).astype(np.uint8)
    lane = raw.lane[0].argmax(axis=0).astype(np.uint8)
    return InferenceResult(dets, drivable, lane)


def _tint(rgb, mask, colour, alpha):
    m = mask.astype(bool)
    px = rgb[m].astype(np.float64)
    blended = (1 - alpha) * px + alpha * np.asarray(colour, dtype=np.float64)
    # round toward the tint colour so every channel below it strictly moves
    up = np.asarray(colour) >= px
    rgb[m] = np.clip(np.where(up, np.ceil(blended), np.floor(blended)), 0, 255).astype(np.uint8)


def draw_box(rgb, box, colour, thickness=2):
    h, w = rgb.shape[:2]
    cx, cy, bw, bh = box
    x0 = int(np.clip(round(cx - bw / 2), 0, w - 1))
    x1 = int(np.clip(round(cx + bw / 2) - 1, 0, w - 1))
    y0 = int(np.clip(round(cy - bh / 2), 0, h - 1))
    y1 = int(np.clip(round(cy + bh / 2) - 1, 0, h - 1))
    t = thickness
    rgb[y0:min(y0 + t, y1 + 1), x0:x1 + 1] = colour
    rgb[max(y1 - t + 1, y0):y1 + 1, x0:x1 + 1] = colour
    rgb[y0:y1 + 1, x0:min(x0 + t, x1 + 1)] = colour
    rgb[y0:y1 + 1, max(x1 - t + 1, x0):x1 + 1] = colour
    return (x0, y0, x1, y1)


def render_overlay(image, detections, drivable_mask, lane_mask, out_path=None) -> np.ndarray:
    """Tint drivable area green and lanes red, outline detections; write a P6 file."""
    rgb = to_rgb8(image).copy()
    h, w = rgb.shape[:2]
    for name, m in (("drivable_mask", drivable_mask), ("lane_mask", lane_mask)):
        if np.shape(m) != (h, w):
            raise ValueError(f"{name} shape {np.shape(m)} does not match image {h}x{w}")
    _tint(rgb, np.asarray(drivable_mask), (0, 255, 0), DRIVABLE_ALPHA)
    _tint(rgb, np.asarray(lane_mask), (255, 0, 0), LANE_ALPHA)
    for d in detections:
        colour = np.rint(PALETTE[d.class_id % len(PALETTE)] * 255).astype(np.uint8)
        draw_box(rgb, d.box, colour)
    if out_path is not None:
        write_ppm(out_path, rgb)
    return rgb
