"""Checkpoint file format.

Layout (little-endian)::

    b"SAMAM001"
    u32 tensor_count
    per tensor: u32 name_len, name (UTF-8), u32 rank, u64 dims[rank], f32 values (row-major)
    u32 config_len, config text (UTF-8 key=value lines)
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .imageio import atomic_write_bytes
from .network import ModelConfig, SaMam

MAGIC = b"SAMAM001"


class CheckpointError(ValueError):
    pass


def encode_checkpoint(state: dict[str, np.ndarray], cfg: ModelConfig) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    text = cfg.to_text().encode("utf-8")
    parts.append(struct.pack("<I", len(text)))
    parts.append(text)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode_checkpoint(buf: bytes) -> tuple[dict[str, np.ndarray], ModelConfig]:
    r = _Reader(buf)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("bad magic: not a SAMAM001 checkpoint")
    count = r.u32("tensor count")
    state: dict[str, np.ndarray] = {}
    for i in range(count):
        try:
            name = r.take(r.u32(f"name length of tensor {i}"), f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"tensor {i}: name is not valid UTF-8") from None
        if name in state:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        rank = r.u32(f"rank of {name!r}")
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"dims of {name!r}"))
        n = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(r.take(4 * n, f"values of {name!r}"), dtype="<f4")
        state[name] = values.astype(np.float64).reshape(dims)
    text = r.take(r.u32("config length"), "config").decode("utf-8")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after config block")
    try:
        cfg = ModelConfig.from_text(text)
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"bad config block: {exc}") from None
    return state, cfg


def save(model: SaMam, path) -> bytes:
    data = encode_checkpoint(model.state_dict(), model.config)
    atomic_write_bytes(path, data)
    return data


def load(path) -> SaMam:
    state, cfg = decode_checkpoint(Path(path).read_bytes())
    model = SaMam(cfg)
    own = dict(model.named_parameters())
    for name in state:
        if name not in own:
            raise CheckpointError(f"unexpected tensor {name!r} for this config")
    for name, p in own.items():
        if name not in state:
            raise CheckpointError(f"missing tensor {name!r}")
        if state[name].shape != p.shape:
            raise CheckpointError(f"tensor {name!r}: shape {state[name].shape} does not match model {p.shape}")
        p.data[...] = state[name]
    return model


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def inspect(path) -> dict:
    """Names, shapes and totals of a checkpoint, after full structural validation."""
    data = Path(path).read_bytes()
    state, cfg = decode_checkpoint(data)
    return {
        "tensors": [(name, arr.shape, arr.size) for name, arr in state.items()],
        "total": int(sum(arr.size for arr in state.values())),
        "config": cfg,
        "sha256": content_hash(data),
    }
