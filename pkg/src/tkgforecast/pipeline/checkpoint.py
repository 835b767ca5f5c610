"""Binary model checkpoints.

Layout: 8-byte magic, little-endian u32 format version, u32 length plus a
UTF-8 JSON header (config, vocabulary sizes, horizon, edge-type grouping),
u32 tensor count, then per tensor: u32 name length, name, u32 ndim, ndim
u64 dims, and the values as little-endian float64.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..encoder import EdgeTypeGrouping
from ..errors import CheckpointError
from .config import TrainConfig
from .model import Forecaster

MAGIC = b"TKGFCKPT"
VERSION = 1


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def save_checkpoint(model: Forecaster, path) -> None:
    g = model.grouping
    header = {
        "config": model.config.to_dict(),
        "num_entities": model.num_entities,
        "num_base_relations": model.num_base_relations,
        "dt": model.dt,
        "grouping": {"group_of": g.group_of.tolist(), "threshold": g.threshold,
                     "num_groups": g.num_groups, "shared_group": g.shared_group},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    params = model.params
    parts = [MAGIC, _u32(VERSION), _u32(len(blob)), blob, _u32(len(params))]
    for name, p in params.items():
        raw = name.encode()
        parts += [_u32(len(raw)), raw, _u32(p.data.ndim), struct.pack(f"<{p.data.ndim}Q", *p.data.shape),
                  np.ascontiguousarray(p.data, dtype="<f8").tobytes()]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> Forecaster:
    """Rebuild a forecaster; rejects foreign files, other versions and shape mismatches."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    header = json.loads(r.take(r.u32()).decode())
    g = header["grouping"]
    grouping = EdgeTypeGrouping(np.array(g["group_of"], dtype=np.int64), g["threshold"],
                                g["num_groups"], g["shared_group"])
    model = Forecaster(TrainConfig.from_dict(header["config"]), header["num_entities"],
                       header["num_base_relations"], grouping, header["dt"])
    params = model.params
    count = r.u32()
    if count != len(params):
        raise CheckpointError(f"checkpoint has {count} tensors, model expects {len(params)}")
    for _ in range(count):
        name = r.take(r.u32()).decode()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        if name not in params:
            raise CheckpointError(f"unexpected tensor {name!r}")
        if tuple(shape) != params[name].data.shape:
            raise CheckpointError(f"{name}: stored shape {tuple(shape)} != model shape {params[name].data.shape}")
        n = int(np.prod(shape, dtype=np.int64))
        params[name].data[...] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape)
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after the last tensor")
    return model
