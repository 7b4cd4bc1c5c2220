"""Binary container: magic, JSON header and a little-endian array payload.

Layout::

    8 bytes   magic
    8 bytes   header length (uint64, little endian)
    n bytes   UTF-8 JSON header
    ...       concatenated array payloads

The header lists every array with dtype, shape, byte offset and length and
carries a sha256 of the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

VERSION = 1


class ContainerError(ValueError):
    pass


def write_container(path, magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    chunks = []
    table = {}
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        raw = arr.astype(dtype, copy=False).tobytes()
        table[name] = {"dtype": dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    head = dict(header)
    head["version"] = VERSION
    head["arrays"] = table
    head["sha256"] = hashlib.sha256(payload).hexdigest()
    blob = json.dumps(head, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != magic:
        raise ContainerError(f"{path}: bad magic {data[:8]!r}, expected {magic!r}")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n])
    if header.get("version") != VERSION:
        raise ContainerError(f"{path}: unsupported version {header.get('version')}")
    payload = data[16 + n:]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ContainerError(f"{path}: checksum mismatch")
    arrays = {}
    for name, meta in header["arrays"].items():
        buf = payload[meta["offset"]:meta["offset"] + meta["nbytes"]]
        arrays[name] = np.frombuffer(buf, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"]).copy()
    return header, arrays
