"""Multi-task network: backbones, weighted-fusion neck, detection and segmentation heads."""

from .config import DET_STRIDES, ModelConfig, parse_resolution
from .detect import Detection, box_iou, decode_detections, encode_box, nms
from .model import (
    PARAM_GROUPS,
    Model,
    Pyramid,
    RawPredictions,
    backbone_forward,
    build_model,
    fuse_pyramid,
    heads_forward,
)

__all__ = [
    "DET_STRIDES", "Detection", "Model", "ModelConfig", "PARAM_GROUPS", "Pyramid", "RawPredictions",
    "backbone_forward", "box_iou", "build_model", "decode_detections", "encode_box", "fuse_pyramid",
    "heads_forward", "nms", "parse_resolution",
]
