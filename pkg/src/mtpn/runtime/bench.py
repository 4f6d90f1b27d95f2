"""Batch-1 latency sweep across input resolutions."""

from __future__ import annotations

import json
import platform
import time
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np
from threadpoolctl import threadpool_limits

from .. import engine as E
from ..errors import MTPNError
from ..network.config import check_resolution, model_label
from ..network.detect import decode_detections, nms
from ..network.model import Model

DEFAULT_RESOLUTIONS = ((256, 384), (256, 512), (384, 640), (768, 1280))
# Speed-up the reference deployment reported for the lighter backbone; kept
# for side-by-side reading, never asserted.
REFERENCE_SPEEDUP = 1.5


@dataclass
class BenchRow:
    h: int
    w: int
    mean_ms: float
    p50_ms: float
    p90_ms: float
    min_ms: float
    fps: float


@dataclass
class BenchReport:
    model_label: str
    device: str
    threads: int
    warmup_iters: int
    timed_iters: int
    rows: list = field(default_factory=list)
    timestamp: str = ""
    backend: str = ""
    include_postprocess: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        d = dict(d)
        d["rows"] = [BenchRow(**r) for r in d.get("rows", [])]
        return cls(**d)


def host_description() -> str:
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


def _set_threads(threads: int):
    try:
        import numba

        with warnings.catch_warnings():
            # numba reports an old TBB on first use of the threading layer; irrelevant here
            warnings.simplefilter("ignore", numba.NumbaWarning)
            numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    except ImportError:  # pragma: no cover
        pass
    return threadpool_limits(limits=threads)


def _timed(fn, clock=time.perf_counter_ns):
    for _ in range(2):
        t0 = clock()
        fn()
        t1 = clock()
        if t1 >= t0:
            return (t1 - t0) / 1e6
    raise MTPNError("clock went backwards twice in a row")


def benchmark(model: Model, resolutions=DEFAULT_RESOLUTIONS, warmup: int = 20, iters: int = 100,
              threads: int = 1, include_postprocess: bool = False, seed: int = 0, clock=time.perf_counter_ns,
              progress=None) -> BenchReport:
    """Time ``iters`` batch-1 forwards per resolution after ``warmup`` untimed ones."""
    if iters < 10:
        raise ValueError(f"iters must be >= 10, got {iters}")
    if warmup < 0:
        raise ValueError("warmup must be nonnegative")
    resolutions = sorted((check_resolution(r) for r in resolutions), key=lambda hw: (hw[0] * hw[1], hw))
    rng = np.random.default_rng(seed)
    rows = []
    with _set_threads(threads), E.no_record():
        for h, w in resolutions:
            x = rng.random((1, 3, h, w), dtype=np.float32)
            if include_postprocess:
                def step():
                    raw = model.forward(x)
                    nms(decode_detections(raw, model.config, 0.25), 0.5)
                    raw.drivable.argmax(axis=1)
                    raw.lane.argmax(axis=1)
            else:
                def step():
                    model.forward(x)
            for _ in range(warmup):
                step()
            times = np.array([_timed(step, clock) for _ in range(iters)])
            mean = float(times.mean())
            rows.append(BenchRow(h, w, mean, float(np.percentile(times, 50)), float(np.percentile(times, 90)),
                                 float(times.min()), 1000.0 / mean))
            if progress is not None:
                progress(rows[-1])
    return BenchReport(
        model_label(model.config), host_description(), threads, warmup, iters, rows,
        datetime.now(timezone.utc).isoformat(timespec="seconds"), E.kernels.get_backend(), include_postprocess,
    )


REPORT_KEYS = ("model_label", "device", "threads", "warmup_iters", "timed_iters", "rows")
ROW_KEYS = ("h", "w", "mean_ms", "p50_ms", "p90_ms", "min_ms", "fps")


def validate_report(d: dict) -> list[str]:
    """Return a list of schema/consistency problems (empty when valid)."""
    problems = [f"missing key {k!r}" for k in REPORT_KEYS if k not in d]
    rows = d.get("rows", [])
    areas = []
    for i, r in enumerate(rows):
        problems += [f"row {i}: missing key {k!r}" for k in ROW_KEYS if k not in r]
        if all(k in r for k in ROW_KEYS):
            if abs(r["fps"] * r["mean_ms"] - 1000.0) > 1.0:
                problems.append(f"row {i}: fps*mean_ms = {r['fps'] * r['mean_ms']:.3f}, expected 1000")
            if not r["min_ms"] <= r["p50_ms"] <= r["p90_ms"]:
                problems.append(f"row {i}: percentiles out of order")
            areas.append(r["h"] * r["w"])
    if areas != sorted(areas):
        problems.append("rows not in ascending pixel count")
    return problems


def compare_bench(heavy: BenchReport, light: BenchReport) -> dict:
    """Per-resolution speed-up of ``light`` over ``heavy``."""
    by_res = {(r.h, r.w): r for r in light.rows}
    rows = []
    for r in heavy.rows:
        o = by_res.get((r.h, r.w))
        if o is not None:
            rows.append({"h": r.h, "w": r.w, "heavy_ms": r.mean_ms, "light_ms": o.mean_ms,
                         "speedup": r.mean_ms / o.mean_ms})
    return {"heavy": heavy.model_label, "light": light.model_label, "rows": rows,
            "reference_speedup": REFERENCE_SPEEDUP}
