"""Rank-4 tensor operators, their gradients and arithmetic-work tallies.

Tensors are plain ``numpy.ndarray`` values of shape ``(n, c, h, w)`` in
``float32`` (production) or ``float64`` (gradient checks).
"""

from . import kernels
from .autograd import Node, Tape, current_tape, no_record, recording, vjp
from .ops import (
    add,
    argmax_channels,
    avgpool,
    batchnorm,
    concat_channels,
    conv2d,
    global_avgpool,
    maxpool,
    merge_coefficients,
    relu,
    relu6,
    resize_bilinear,
    sigmoid,
    softmax_channels,
    threshold,
    weighted_merge,
)
from .tally import OpTally, counting, tally_scope

__all__ = [
    "Node", "OpTally", "Tape", "add", "argmax_channels", "avgpool", "batchnorm",
    "concat_channels", "conv2d", "counting", "current_tape", "global_avgpool", "kernels",
    "maxpool", "merge_coefficients", "no_record", "recording", "relu", "relu6",
    "resize_bilinear", "sigmoid", "softmax_channels", "tally_scope", "threshold", "vjp",
    "weighted_merge",
]
