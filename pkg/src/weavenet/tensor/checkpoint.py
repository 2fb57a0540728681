"""Binary checkpoint container.

Layout::

    b"WVCK"                 magic
    uint32 LE               format version
    uint64 LE               header length in bytes
    header                  UTF-8 JSON, keys sorted, no whitespace
    payload                 concatenated little-endian arrays

The header holds a free-form ``config`` object and an ``entries`` list of
``{"name", "shape", "dtype", "offset", "nbytes"}`` with offsets relative to
the start of the payload. Entries are written in sorted name order so equal
contents always produce identical bytes.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"WVCK"
VERSION = 1
_DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8"}


class CheckpointError(ValueError):
    """Raised for malformed or incompatible checkpoint files."""


def dumps(arrays, config=None):
    """Serialize a name -> array mapping plus a JSON-able config to bytes."""
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise CheckpointError("unsupported dtype %s for %r" % (dtype, name))
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config or {}, "entries": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<IQ", VERSION, len(header)), header] + chunks)


def loads(blob):
    """Inverse of :func:`dumps`; returns ``(arrays, config)``."""
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<IQ", blob[4:16])
    if version != VERSION:
        raise CheckpointError("unsupported checkpoint version %d" % version)
    header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    payload = memoryview(blob)[16 + header_len:]
    arrays = {}
    for e in header["entries"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CheckpointError("truncated checkpoint at entry %r" % e["name"])
        arr = np.frombuffer(payload[e["offset"]:end], dtype=_DTYPES[e["dtype"]])
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(e["dtype"])
    return arrays, header["config"]


def save(path, arrays, config=None):
    """Write a checkpoint atomically (temp file then rename)."""
    tmp = "%s.tmp" % path
    with open(tmp, "wb") as fh:
        fh.write(dumps(arrays, config))
    os.replace(tmp, path)


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
