"""Self-describing parameter checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(format version, user metadata, per-entry name/dtype/shape/offset), then the
raw array bytes back to back. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"DPCKPT01"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, arrays: dict, meta: dict | None = None):
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        dt = a.dtype.newbyteorder("<")
        a = a.astype(dt, copy=False)
        raw = a.tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"format_version": FORMAT_VERSION,
                         "meta": meta or {},
                         "entries": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version "
                                  f"{header.get('format_version')}")
        body = f.read()
    arrays = {}
    for e in header["entries"]:
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])) \
            .reshape(e["shape"]).copy()
    return arrays, header["meta"]
