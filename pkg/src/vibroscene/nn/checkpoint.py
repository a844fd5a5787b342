"""Flat binary parameter container.

Layout (little-endian): magic ``BBX1``, u32 version, u32 record count, then per
record: u32 name length, UTF-8 name, u32 ndim, ndim x u64 dims, float64 data
in C order.
"""
from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"BBX1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(state) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(state)))
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(data: bytes) -> "OrderedDict[str, np.ndarray]":
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("bad magic")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
        if name in out:
            raise CheckpointError(f"duplicate record {name!r}")
        out[name] = arr
    if pos != len(view):
        raise CheckpointError("trailing bytes after last record")
    return out


def save(path, state) -> None:
    Path(path).write_bytes(dumps(state))


def load(path) -> "OrderedDict[str, np.ndarray]":
    return loads(Path(path).read_bytes())
