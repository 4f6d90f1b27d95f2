"""Atomic file writes and binary P6 pixmaps."""

from __future__ import annotations

import os
import re
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np


@contextmanager
def atomic_open(path, mode="wb"):
    """Write to a sibling temp file and rename it over ``path`` on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    with atomic_open(path, "w") as fh:
        fh.write(text)


def to_rgb8(image) -> np.ndarray:
    """``(1, 3, H, W)`` float in [0, 1] or ``(H, W, 3)`` uint8 -> ``(H, W, 3)`` uint8."""
    a = np.asarray(image)
    if a.dtype == np.uint8 and a.ndim == 3:
        return a
    if a.ndim == 4:
        a = a[0]
    return np.clip(np.rint(a.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image) -> None:
    rgb = to_rgb8(image)
    h, w = rgb.shape[:2]
    with atomic_open(path) as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb).tobytes())


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_ppm(path) -> np.ndarray:
    """Read an 8-bit P6 file into a ``(1, 3, H, W)`` float32 array in [0, 1]."""
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary P6 pixmap")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit pixmaps are supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    raw = data[pos:pos + w * h * 3]
    if len(raw) != w * h * 3:
        raise ValueError(f"{path}: pixel data truncated")
    rgb = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return np.ascontiguousarray(rgb.transpose(2, 0, 1)[None], dtype=np.float32) / np.float32(255.0)
