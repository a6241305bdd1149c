"""Versioned binary checkpoints for parameter and optimizer arrays.

Layout: an 8-byte magic, a little-endian u32 header length, a JSON header,
then the raw array payload. The header records each array's name, shape and
byte offset; payloads are float64 little-endian, concatenated in header
order. Writes go through a temp file and ``os.replace`` so a crash never
leaves a half-written checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"VSGCKPT1"


def save_checkpoint(path: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    names = sorted(arrays)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        a = np.asarray(arrays[name], dtype=np.float64)
        # ascontiguousarray promotes 0-d to 1-d, so record the shape first
        blob = np.ascontiguousarray(a).astype("<f8").tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset,
                        "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {"format": 1, "meta": meta or {}, "arrays": entries}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format") != 1:
            raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
        payload = fh.read()
    arrays = {}
    for entry in header["arrays"]:
        lo = entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(payload):
            raise ValueError(f"{path}: truncated payload for array {entry['name']!r}")
        flat = np.frombuffer(payload[lo:hi], dtype="<f8")
        arrays[entry["name"]] = flat.reshape(entry["shape"]).astype(np.float64)
    return arrays, header.get("meta", {})
