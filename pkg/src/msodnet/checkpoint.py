"""Flat binary checkpoints.

Layout: the 5-byte magic ``MSOD1``, then per parameter, in tree order:
u32 name length, UTF-8 name, u32 rank, rank × u64 extents, float64 values.
All integers and floats are little-endian.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .layers import map_tensors, named_tensors
from .tensor import Tensor

MAGIC = b"MSOD1"


class CheckpointError(ValueError):
    pass


def encode_params(params) -> bytes:
    parts = [MAGIC]
    for name, t in named_tensors(params):
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}Q", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_params(buf: bytes) -> dict:
    """Name → float64 array, in file order."""
    if buf[:5] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:5]!r}")
    pos = 5
    out = {}
    n = len(buf)
    try:
        while pos < n:
            (ln,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos : pos + ln].decode("utf-8")
            pos += ln
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > n:
                raise CheckpointError(f"truncated data for {name!r} at byte {pos}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint at byte {pos}") from exc
    return out


def save(path, params) -> None:
    data = encode_params(params)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_into(path, template):
    """Return ``template`` with every tensor replaced by the stored values."""
    with open(path, "rb") as fh:
        stored = decode_params(fh.read())
    expected = {name for name, _ in named_tensors(template)}
    missing = expected - stored.keys()
    extra = stored.keys() - expected
    if missing or extra:
        raise CheckpointError(
            f"checkpoint does not match the model: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}"
        )

    def fill(name: str, t: Tensor) -> Tensor:
        arr = stored[name]
        if arr.shape != t.shape:
            raise CheckpointError(f"{name}: stored shape {arr.shape} != model shape {t.shape}")
        return Tensor(arr, requires_grad=t.requires_grad)

    return map_tensors(template, fill)
