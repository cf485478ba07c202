"""Named-tensor container on disk.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"VFNTCKPT"
    bytes 8..15   uint64 header length H
    next H bytes  UTF-8 JSON {"tensors": [{"name", "shape", "offset"}, ...],
                              "meta": {...}}
    remainder     float64 little-endian payloads; "offset" counts bytes from
                  the start of this section, each tensor row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VFNTCKPT"
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, value in tensors.items():
        value = value.data if hasattr(value, "requires_grad") else value
        arr = np.asarray(value, dtype=_LE_F64, order="C")  # keeps 0-d shapes
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a tensor container")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode())
    body = memoryview(raw)[16 + hlen:]
    out = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(body, dtype=_LE_F64, count=count, offset=e["offset"])
        out[e["name"]] = arr.astype(np.float64).reshape(e["shape"])
    return out, header.get("meta", {})
