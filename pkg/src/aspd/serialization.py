"""Binary checkpoint format.

Layout (little-endian throughout):

    b"ASPD"                      magic
    u32                          format version
    u32 + bytes                  config block, UTF-8 "key=value" lines
    u32                          tensor count
    per tensor:
        u32 + bytes              name (UTF-8)
        u8                       rank
        u64 * rank               dims
        f32 * prod(dims)         data, row-major

Tensors are stored at 32-bit precision and cast back to float64 on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError

MAGIC = b"ASPD"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict = field(default_factory=dict)  # name -> ndarray
    config: dict = field(default_factory=dict)  # str -> str

    def params(self) -> dict:
        """Tensors as float64 arrays (the in-memory training precision)."""
        return {k: np.asarray(v, dtype=np.float64) for k, v in self.tensors.items()}


def _config_block(config: dict) -> bytes:
    lines = []
    for key, value in config.items():
        key, value = str(key), str(value)
        if not key or "=" in key or "\n" in key or "\n" in value:
            raise ConfigError(f"config entry {key!r} cannot be stored as a key=value line")
        lines.append(f"{key}={value}\n")
    return "".join(lines).encode("utf-8")


def encode(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    block = _config_block(ckpt.config)
    out += [struct.pack("<I", len(block)), block, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        if arr.ndim > 255:
            raise ConfigError(f"tensor {name!r}: rank {arr.ndim} too large")
        if not np.all(np.isfinite(arr)):
            raise ConfigError(f"tensor {name!r}: non-finite values")
        raw = name.encode("utf-8")
        out += [struct.pack("<I", len(raw)), raw, struct.pack("<B", arr.ndim),
                struct.pack(f"<{arr.ndim}Q", *arr.shape),
                np.ascontiguousarray(arr, dtype="<f4").tobytes()]
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.pos + size
        if end > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (size,) = r.unpack("<I", "config length")
    try:
        text = r.take(size, "config").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError("config block is not UTF-8") from exc
    config = {}
    lines = text.split("\n")
    if lines[-1]:
        raise CheckpointError("config block does not end with a newline")
    for line in lines[:-1]:
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"config line without '=': {line!r}")
        config[key] = value
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I", "name length")
        try:
            name = r.take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("tensor name is not UTF-8") from exc
        (rank,) = r.unpack("<B", "rank")
        dims = r.unpack(f"<{rank}Q", "dims")
        numel = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(r.take(4 * numel, f"data of {name!r}"), dtype="<f4")
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r}")
        tensors[name] = data.reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after last tensor")
    return Checkpoint(tensors, config)


def save_checkpoint(path, tensors: dict, config: dict | None = None) -> None:
    Path(path).write_bytes(encode(Checkpoint(dict(tensors), dict(config or {}))))


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
