"""Binary tensor container used for model checkpoints and cached samples.

Layout, little-endian throughout::

    b"MTPN"  u32 version  u32 blob_len  blob(UTF-8 JSON)  u32 count
    count x { u32 name_len  name  u32 rank  rank x u32 dim  u8 dtype  data }

dtype 0 is 32-bit float. Trailing bytes are rejected.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, ConfigError
from ..network.config import ModelConfig
from ..network.model import Model, build_model
from .fileio import atomic_open

MAGIC = b"MTPN"
FORMAT_VERSION = 1
DTYPE_F32 = 0
MAX_RANK = 8


def model_blob(config: ModelConfig) -> bytes:
    return json.dumps({"kind": "model", "config": config.to_dict()}, sort_keys=True).encode("utf-8")


def write_tensors(path, blob: bytes, tensors: dict) -> None:
    with atomic_open(path) as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            nb = name.encode("utf-8")
            a = np.asarray(arr, dtype="<f4")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
            fh.write(struct.pack("<B", DTYPE_F32))
            fh.write(a.tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.buf = memoryview(data)
        self.pos = 0

    def take(self, n, what, tensor=None):
        if n < 0 or self.pos + n > len(self.buf):
            raise CheckpointError(f"file truncated while reading {what}", tensor)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what, tensor=None):
        return struct.unpack("<I", self.take(4, what, tensor))[0]


def read_tensors(path):
    """Parse a container; returns ``(blob_dict, {name: float32 array})``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    r = _Reader(data)
    if bytes(r.take(4, "magic")) != MAGIC:
        raise CheckpointError("bad magic; not an MTPN file")
    version = r.u32("format version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    blob_raw = bytes(r.take(r.u32("config length"), "config blob"))
    try:
        blob = json.loads(blob_raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"config blob is not valid UTF-8 JSON: {exc}") from None
    if not isinstance(blob, dict):
        raise CheckpointError("config blob must be a JSON object")
    count = r.u32("tensor count")
    tensors = {}
    for k in range(count):
        raw_name = bytes(r.take(r.u32(f"name length of tensor #{k}"), f"name of tensor #{k}"))
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"tensor #{k} name is not UTF-8") from None
        if name in tensors:
            raise CheckpointError("duplicate tensor", name)
        rank = r.u32("rank", name)
        if rank > MAX_RANK:
            raise CheckpointError(f"rank {rank} exceeds {MAX_RANK}", name)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims", name))
        dtype = r.take(1, "dtype tag", name)[0]
        if dtype != DTYPE_F32:
            raise CheckpointError(f"unknown dtype tag {dtype}", name)
        numel = math.prod(dims)
        raw = r.take(4 * numel, "tensor data", name)
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return blob, tensors


def save_checkpoint(model: Model, path) -> None:
    write_tensors(path, model_blob(model.config), model.parameters)


def load_checkpoint(path) -> Model:
    blob, tensors = read_tensors(path)
    if blob.get("kind") != "model" or not isinstance(blob.get("config"), dict):
        raise CheckpointError("file does not hold a model checkpoint")
    try:
        config = ModelConfig.from_dict(blob["config"])
    except (ConfigError, TypeError) as exc:
        raise CheckpointError(f"invalid embedded config: {exc}") from None
    model = build_model(config, seed=0)
    missing = [n for n in model.parameters if n not in tensors]
    if missing:
        raise CheckpointError(f"{len(missing)} parameter(s) missing", missing[0])
    extra = [n for n in tensors if n not in model.parameters]
    if extra:
        raise CheckpointError(f"{len(extra)} unexpected tensor(s)", extra[0])
    for name, ref in model.parameters.items():
        if tensors[name].shape != ref.shape:
            raise CheckpointError(f"shape {tensors[name].shape} does not match expected {ref.shape}", name)
    model.parameters = {n: tensors[n] for n in model.parameters}
    return model
