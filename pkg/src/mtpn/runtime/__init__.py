"""Checkpoints, inference, overlays and the latency benchmark."""

from .bench import DEFAULT_RESOLUTIONS, BenchReport, BenchRow, benchmark, compare_bench, validate_report
from .checkpoint import load_checkpoint, read_tensors, save_checkpoint, write_tensors
from .fileio import read_ppm, write_ppm
from .infer import InferenceResult, infer, render_overlay

__all__ = [
    "DEFAULT_RESOLUTIONS", "BenchReport", "BenchRow", "InferenceResult", "benchmark", "compare_bench",
    "infer", "load_checkpoint", "read_ppm", "read_tensors", "render_overlay", "save_checkpoint",
    "validate_report", "write_ppm", "write_tensors",
]
