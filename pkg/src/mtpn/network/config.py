"""Declarative model configuration and anchor geometry."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

from ..errors import ConfigError

BACKBONES = ("resnet50", "mobilenetv2")
DET_STRIDES = (8, 16, 32)
ANCHORS_PER_CELL = 3
SEG_CLASSES = 2

# Per-backbone widths, chosen so the cost model lands on the reference
# parameter/FLOP magnitudes of each variant at 384x640.
BACKBONE_DEFAULTS = {
    "resnet50": {"fusion_width": 128, "seg_width": 368, "skip_width": 64},
    "mobilenetv2": {"fusion_width": 160, "seg_width": 112, "skip_width": 48},
}
_WIDTH_FIELDS = ("fusion_width", "seg_width", "skip_width")


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "mobilenetv2"
    num_classes: int = 10
    fusion_width: int | None = None
    fusion_repeats: int = 2
    aspect_ratios: tuple = (0.5, 1.0, 2.0)
    anchor_base_scale: float = 4.0
    input_res: tuple = (384, 640)
    seg_width: int | None = None
    skip_width: int | None = None
    anchors_per_cell: int = field(default=ANCHORS_PER_CELL)
    seg_classes: int = field(default=SEG_CLASSES)

    def __post_init__(self):
        object.__setattr__(self, "aspect_ratios", tuple(float(r) for r in self.aspect_ratios))
        object.__setattr__(self, "input_res", tuple(int(v) for v in self.input_res))
        for name in _WIDTH_FIELDS:
            if getattr(self, name) is None and self.backbone in BACKBONES:
                object.__setattr__(self, name, BACKBONE_DEFAULTS[self.backbone][name])
        self.validate()

    def validate(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}", "backbone")
        for name in ("num_classes", "fusion_width", "fusion_repeats", "seg_width", "skip_width"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}", name)
        if self.anchors_per_cell != ANCHORS_PER_CELL:
            raise ConfigError(f"anchors_per_cell is fixed at {ANCHORS_PER_CELL}", "anchors_per_cell")
        if self.seg_classes != SEG_CLASSES:
            raise ConfigError(f"seg_classes is fixed at {SEG_CLASSES}", "seg_classes")
        r = self.aspect_ratios
        if len(r) != ANCHORS_PER_CELL:
            raise ConfigError(f"need exactly {ANCHORS_PER_CELL} aspect ratios, got {len(r)}", "aspect_ratios")
        if any(not math.isfinite(v) or v <= 0 for v in r) or len(set(r)) != len(r):
            raise ConfigError(f"aspect ratios must be positive and distinct, got {r}", "aspect_ratios")
        if not (math.isfinite(self.anchor_base_scale) and self.anchor_base_scale > 0):
            raise ConfigError("anchor_base_scale must be positive", "anchor_base_scale")
        check_resolution(self.input_res, "input_res")

    @property
    def det_channels(self) -> int:
        return ANCHORS_PER_CELL * (5 + self.num_classes)

    def anchors(self, stride: int) -> list[tuple[float, float]]:
        """Anchor ``(width, height)`` pairs attached to every cell at ``stride``."""
        base = self.anchor_base_scale * stride
        return [(base * math.sqrt(r), base / math.sqrt(r)) for r in self.aspect_ratios]

    def replace(self, **changes) -> "ModelConfig":
        d = self.to_dict()
        d.update(changes)
        if "backbone" in changes:
            for k in _WIDTH_FIELDS:
                if k not in changes:
                    d[k] = None
        return ModelConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aspect_ratios"] = list(self.aspect_ratios)
        d["input_res"] = list(self.input_res)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}", sorted(unknown)[0])
        return cls(**d)


def model_label(config: ModelConfig) -> str:
    return {"resnet50": "ResNet50 + Feature fusion", "mobilenetv2": "MobileNetV2 + Feature fusion"}[config.backbone]


def check_resolution(res, what="resolution"):
    try:
        h, w = (int(v) for v in res)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a (height, width) pair, got {res!r}", what) from None
    if h < 32 or w < 32 or h % 32 or w % 32:
        raise ConfigError(f"{what} {h}x{w} must be positive multiples of 32", what)
    return h, w


def parse_resolution(text: str) -> tuple[int, int]:
    """Parse ``"384x640"`` into ``(384, 640)``."""
    try:
        h, w = text.lower().split("x")
        return check_resolution((int(h), int(w)))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"resolution must look like HxW, got {text!r}", "resolution") from None
