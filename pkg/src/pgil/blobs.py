"""Versioned binary blobs: magic, JSON header, then raw little-endian arrays.

Layout::

    b"PGILBLOB" | u32 format version | u32 header length | header (UTF-8 JSON) | array bytes

The header lists every array (name, dtype, shape, offset, nbytes) next to
free-form metadata. Writing the same arrays and metadata yields identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PGILBLOB"
FORMAT_VERSION = 1


class BlobError(ValueError):
    pass


def dumps(arrays: dict, meta: dict, kind: str) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def loads(buf: bytes, kind: str | None = None):
    if buf[:8] != MAGIC:
        raise BlobError("not a PGIL blob (bad magic)")
    version, hlen = struct.unpack("<II", buf[8:16])
    if version != FORMAT_VERSION:
        raise BlobError(f"unsupported blob version {version}")
    header = json.loads(buf[16:16 + hlen])
    if kind is not None and header["kind"] != kind:
        raise BlobError(f"expected a {kind!r} blob, found {header['kind']!r}")
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        raw = buf[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise BlobError(f"array {e['name']!r} truncated")
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def save(path, arrays: dict, meta: dict, kind: str) -> str:
    data = dumps(arrays, meta, kind)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path, kind: str | None = None):
    return loads(Path(path).read_bytes(), kind)
