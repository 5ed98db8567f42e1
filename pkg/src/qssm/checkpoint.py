"""Checkpoint file format.

Layout (all text is UTF-8)::

    QSSMCKPT 1\\n
    <header JSON on one line>\\n
    <payload>

The header holds ``config_hash``, ``meta`` (free-form JSON, the model shape
lives here), ``entries`` (a list of ``{"name", "shape", "offset", "nbytes"}``
in payload order) and ``sha256``, the hex digest of the payload. The
payload is every parameter value as little-endian float64 in C order,
concatenated in entry order.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = b"QSSMCKPT 1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, values: dict[str, np.ndarray], config_hash: str, meta: dict | None = None) -> Path:
    entries, chunks, offset = [], [], 0
    for name, value in values.items():
        buf = np.ascontiguousarray(value, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(value)), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    header = {"config_hash": config_hash, "meta": meta or {}, "entries": entries,
              "sha256": hashlib.sha256(payload).hexdigest()}
    path = Path(path)
    path.write_bytes(MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + payload)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(values, header)``; raises :class:`CheckpointError` on any corruption."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a qssm checkpoint (bad magic)")
    nl = raw.find(b"\n", len(MAGIC))
    if nl < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[len(MAGIC):nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    payload = raw[nl + 1:]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")
    values = {}
    try:
        for e in header["entries"]:
            chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
            values[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(float)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed entry table ({exc})") from None
    return values, header
