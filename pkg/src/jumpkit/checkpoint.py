"""Binary checkpoint format.

Layout: 8-byte magic, little-endian uint32 header length, a JSON header
(sorted keys) listing meta data and the name/shape of every array, then the
arrays as contiguous little-endian float64 in header order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .io import atomic_write_bytes

MAGIC = b"JKCKPT01"


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(net, meta: dict) -> bytes:
    arrays = net.named_arrays()
    header = {"meta": meta, "arrays": [[name, list(np.shape(a))] for name, a in arrays], "dtype": "<f8"}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return MAGIC + struct.pack("<I", len(hb)) + hb + body


def save_checkpoint(path: str, net, meta: dict) -> None:
    atomic_write_bytes(path, checkpoint_bytes(net, meta))


def parse_checkpoint(data: bytes):
    if data[:8] != MAGIC:
        raise CheckpointError("not a jumpkit checkpoint (bad magic)")
    (n,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + n])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    off = 12 + n
    arrays = {}
    for name, shape in header["arrays"]:
        size = int(np.prod(shape)) if shape else 1
        end = off + 8 * size
        if end > len(data):
            raise CheckpointError("truncated checkpoint")
        arrays[name] = np.frombuffer(data[off:end], dtype="<f8").reshape(shape).astype(float)
        off = end
    if off != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    return header["meta"], arrays


def load_checkpoint(path: str):
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())
