"""Checkpoint container: JSON header + little-endian float32 payloads.

Layout::

    b"MRLCKPT1"                      8-byte magic
    <uint64 little-endian>           header length in bytes
    <header>                         UTF-8 JSON: meta + array manifest
    <payload>                        concatenated '<f4' arrays

Each manifest entry is ``{"name", "shape", "offset"}`` with ``offset``
relative to the payload start. float32 arrays round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"MRLCKPT1"
DTYPE = np.dtype("<f4")


def dumps_checkpoint(params: dict, meta: dict | None = None) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype=DTYPE)
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "arrays": manifest}, sort_keys=True).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def save_checkpoint(path, params: dict, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps_checkpoint(params, meta))


def loads_checkpoint(blob: bytes) -> tuple[dict, dict]:
    if blob[:8] != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16 : 16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt checkpoint header: {exc}") from None
    payload = memoryview(blob)[16 + hlen :]
    params = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        end = start + count * DTYPE.itemsize
        if end > len(payload):
            raise DataError(f"array {entry['name']!r} runs past end of file")
        params[entry["name"]] = (
            np.frombuffer(payload[start:end], dtype=DTYPE).reshape(shape).astype(np.float32)
        )
    return params, header["meta"]


def load_checkpoint(path) -> tuple[dict, dict]:
    return loads_checkpoint(Path(path).read_bytes())
