"""Binary checkpoints: model parameters, centroid banks and run metadata.

Layout (all integers little-endian):

    8 bytes   magic  b"DSCLCKPT"
    4 bytes   uint32 format version (currently 1)
    8 bytes   uint64 length H of the JSON header
    H bytes   UTF-8 JSON header
    ...       float64 payload, tensors back to back in header order

The header is ``{"format_version": 1, "meta": {...}, "tensors": [{"name",
"shape", "offset"}, ...]}`` where ``offset`` counts float64 values from the
start of the payload. Bank tensors are named ``bank/<domain>/<space>/centroids``
and ``bank/<domain>/<space>/initialized`` (0.0 or 1.0 per class).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .centroids import CentroidBank
from .errors import ParseError

MAGIC = b"DSCLCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], banks: dict | None = None,
                    meta: dict | None = None):
    tensors = dict(params)
    bank_alpha = {}
    for (domain, space), bank in (banks or {}).items():
        tensors[f"bank/{domain}/{space}/centroids"] = bank.centroids
        tensors[f"bank/{domain}/{space}/initialized"] = bank.initialized.astype(np.float64)
        bank_alpha[f"{domain}/{space}"] = bank.alpha
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = {"format_version": FORMAT_VERSION, "meta": {**(meta or {}), "bank_alpha": bank_alpha},
              "tensors": entries}
    blob = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path):
    """Returns (params, banks, meta)."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen])
    payload = np.frombuffer(raw[20 + hlen:], dtype="<f8")
    tensors = {}
    for e in header["tensors"]:
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        tensors[e["name"]] = payload[e["offset"]:e["offset"] + size].reshape(e["shape"]).copy()
    meta = header["meta"]
    params = {k: v for k, v in tensors.items() if not k.startswith("bank/")}
    banks = {}
    for key, alpha in meta.get("bank_alpha", {}).items():
        domain, space = key.split("/")
        banks[(domain, space)] = CentroidBank(tensors[f"bank/{key}/centroids"],
                                              tensors[f"bank/{key}/initialized"] > 0.5, alpha)
    return params, banks, meta
