"""Flat binary container for parameters and memory snapshots.

Layout (all little-endian):

    magic   4 bytes  b"SSC1"
    version u32
    n_tensors u32
    n_memory  u32
    per tensor: name_len u16 | name utf-8 | rank u8 | dims u32*rank | float64 data
    per memory item: source_id i64 | label i64 | rank u8 | dims u32*rank | float64 data
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError

MAGIC = b"SSC1"
VERSION = 1

MemoryRecord = tuple[int, int, np.ndarray]  # (source_id, label, features)


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray],
                    memory_items: Sequence[MemoryRecord] = ()) -> None:
    parts = [MAGIC, struct.pack("<III", VERSION, len(tensors), len(memory_items))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    for source_id, label, features in memory_items:
        arr = np.ascontiguousarray(features, dtype="<f8")
        parts.append(struct.pack("<qqB", source_id, label, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(
                f"{self.path}: truncated at byte {self.pos}, needed {n} more"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_array(r: _Reader) -> np.ndarray:
    (rank,) = r.unpack("<B")
    dims = r.unpack(f"<{rank}I") if rank else ()
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(r.take(count * 8), dtype="<f8")
    return data.reshape(dims).astype(np.float64)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray],
                                               list[MemoryRecord]]:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise DataError(f"{path}: bad magic, not a checkpoint file")
    version, n_tensors, n_memory = r.unpack("<III")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        tensors[name] = _read_array(r)
    memory: list[MemoryRecord] = []
    for _ in range(n_memory):
        source_id, label, = r.unpack("<qq")
        memory.append((source_id, label, _read_array(r)))
    if r.pos != len(r.blob):
        raise DataError(f"{path}: {len(r.blob) - r.pos} trailing bytes at {r.pos}")
    return tensors, memory
