"""Versioned binary container for named float64 arrays.

Layout::

    b"ASPCKPT\\0" | u32 format version | u64 header length | JSON header | payload

The header records the format version, the model configuration and its hash,
and one entry per array (name, shape, byte offset into the payload). The
payload is the concatenation of little-endian float64 arrays.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"ASPCKPT\0"
FORMAT_VERSION = 1


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_container(path, magic: bytes, header: dict, arrays: dict) -> Path:
    """Write ``header`` plus little-endian float64 ``arrays`` to ``path``."""
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, value in arrays.items():
        a = np.ascontiguousarray(np.asarray(value, dtype="<f8"))
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = dict(header, entries=entries)
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<IQ", header["format_version"], len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)
    return path


def read_container(path, magic: bytes, version: int):
    raw = Path(path).read_bytes()
    if raw[:len(magic)] != magic:
        raise DataError(f"{path}: wrong file type")
    found, hlen = struct.unpack_from("<IQ", raw, len(magic))
    if found != version:
        raise DataError(f"{path}: unsupported format version {found}")
    start = len(magic) + struct.calcsize("<IQ")
    header = json.loads(raw[start:start + hlen])
    payload = memoryview(raw)[start + hlen:]
    arrays = {}
    for e in header["entries"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return arrays, header


def save_checkpoint(path, arrays: dict, config: dict, extra: dict | None = None) -> Path:
    header = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash(config),
        "config": config,
        "extra": extra or {},
    }
    return write_container(path, MAGIC, header, arrays)


def load_checkpoint(path):
    """Returns ``(arrays, header)``."""
    arrays, header = read_container(path, MAGIC, FORMAT_VERSION)
    if header["config_hash"] != config_hash(header["config"]):
        raise DataError(f"{path}: config hash mismatch")
    return arrays, header
