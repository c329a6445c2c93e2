"""Binary tensor checkpoints.

Layout (little-endian): magic ``PAIRRL01``; u32 tensor count; then per tensor
u32 name length, UTF-8 name, u32 rank, rank x u32 dims, float32 payload.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from pairrl.errors import CheckpointError

MAGIC = b"PAIRRL01"
_U32 = struct.Struct("<I")


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, _U32.pack(len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        chunks += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        chunks += [_U32.pack(d) for d in arr.shape]
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) + 4:
        raise CheckpointError("file too short for header")
    if buf[:6] != MAGIC[:6]:
        raise CheckpointError("bad magic bytes")
    if buf[6:8] != MAGIC[6:8]:
        raise CheckpointError(f"unsupported checkpoint version {buf[6:8]!r}")
    pos = len(MAGIC)

    def u32() -> int:
        nonlocal pos
        if pos + 4 > len(buf):
            raise CheckpointError("truncated checkpoint")
        (v,) = _U32.unpack_from(buf, pos)
        pos += 4
        return v

    out: dict[str, np.ndarray] = {}
    for _ in range(u32()):
        n = u32()
        if pos + n > len(buf):
            raise CheckpointError("truncated tensor name")
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        dims = [u32() for _ in range(u32())]
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise CheckpointError(f"truncated payload for {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)
        pos += nbytes
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after last tensor")
    return out
