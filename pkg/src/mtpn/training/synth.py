"""Procedural road scenes: a drivable trapezoid, lane stripes and boxed objects."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..network.config import check_resolution

# Distinct object colours, indexed by class id (cycled beyond ten classes).
PALETTE = np.array([
    [0.90, 0.10, 0.10], [0.10, 0.20, 0.90], [0.95, 0.85, 0.10], [0.70, 0.10, 0.80],
    [0.10, 0.85, 0.85], [0.95, 0.50, 0.05], [0.55, 0.30, 0.10], [0.05, 0.05, 0.05],
    [0.95, 0.60, 0.75], [0.40, 0.95, 0.30],
])

DIFFICULTIES = {
    # objects (min, max), box side as fraction of min(H, W), pixel noise
    "easy": {"objects": (1, 3), "size": (0.20, 0.38), "noise": 0.0},
    "medium": {"objects": (1, 5), "size": (0.10, 0.38), "noise": 0.03},
}


@dataclass
class Sample:
    image: np.ndarray  # (1, 3, H, W) float32 in [0, 1]
    boxes: list  # [(class_id, cx, cy, w, h)] in pixels
    drivable_mask: np.ndarray  # (H, W) uint8
    lane_mask: np.ndarray  # (H, W) uint8

    @property
    def resolution(self):
        return self.image.shape[2:]


def _edge_x(y, y_top, x_top, x_bot, h):
    t = (y - y_top) / max(h - 1 - y_top, 1)
    return x_top + t * (x_bot - x_top)


def synth_sample(seed: int, resolution=(128, 192), difficulty: str = "easy", num_classes: int = 10) -> Sample:
    H, W = check_resolution(resolution)
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {sorted(DIFFICULTIES)}, got {difficulty!r}")
    spec = DIFFICULTIES[difficulty]
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)

    img = np.empty((H, W, 3))
    sky = np.array([0.55, 0.70, 0.90]) + rng.uniform(-0.05, 0.05, 3)
    ground = np.array([0.25, 0.50, 0.20]) + rng.uniform(-0.05, 0.05, 3)
    horizon = int(H * rng.uniform(0.35, 0.5))
    img[:] = np.where((yy < horizon)[..., None], sky, ground)

    centre = W * rng.uniform(0.4, 0.6)
    half_top = W * rng.uniform(0.04, 0.10)
    left_bot, right_bot = W * rng.uniform(-0.05, 0.15), W * rng.uniform(0.85, 1.05)
    left = _edge_x(yy, horizon, centre - half_top, left_bot, H)
    right = _edge_x(yy, horizon, centre + half_top, right_bot, H)
    drivable = (yy >= horizon) & (xx >= left) & (xx <= right)
    img[drivable] = np.array([0.35, 0.35, 0.37]) + rng.uniform(-0.03, 0.03, 3)

    lane = np.zeros((H, W), dtype=bool)
    n_lanes = int(rng.integers(1, 4))
    for k in range(n_lanes):
        f = (k + 1) / (n_lanes + 1) + rng.uniform(-0.05, 0.05)
        xl = left + f * (right - left)
        half = 0.6 + 1.2 * (yy - horizon) / max(H - horizon, 1)
        lane |= drivable & (np.abs(xx - xl) <= half)
    img[lane] = 0.95

    boxes = []
    side = min(H, W)
    n_obj = int(rng.integers(spec["objects"][0], spec["objects"][1] + 1))
    occupied = np.zeros((H, W), dtype=bool)
    for _ in range(n_obj):
        for _attempt in range(20):
            bw = int(side * rng.uniform(*spec["size"]))
            bh = int(side * rng.uniform(*spec["size"]))
            bw, bh = max(bw, 4), max(bh, 4)
            x0 = int(rng.integers(0, W - bw + 1))
            y0 = int(rng.integers(0, H - bh + 1))
            region = occupied[y0:y0 + bh, x0:x0 + bw]
            if region.mean() < 0.1:
                break
        else:
            continue
        c = int(rng.integers(0, num_classes))
        occupied[y0:y0 + bh, x0:x0 + bw] = True
        img[y0:y0 + bh, x0:x0 + bw] = PALETTE[c % len(PALETTE)]
        boxes.append((c, x0 + bw / 2.0, y0 + bh / 2.0, float(bw), float(bh)))

    if spec["noise"]:
        img += rng.normal(0.0, spec["noise"], img.shape)
    img = np.clip(img, 0.0, 1.0)
    image = np.ascontiguousarray(img.transpose(2, 0, 1)[None], dtype=np.float32)
    return Sample(
        image,
        boxes,
        (drivable & ~occupied).astype(np.uint8),
        (lane & ~occupied).astype(np.uint8),
    )


def synth_dataset(count: int, seed: int = 0, resolution=(128, 192), difficulty="easy", num_classes=10) -> list[Sample]:
    return [synth_sample(seed + k, resolution, difficulty, num_classes) for k in range(count)]
