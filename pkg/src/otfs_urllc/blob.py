"""Self-describing binary container for datasets, channel dumps and checkpoints.

Layout::

    8 bytes   magic (b"OTFSBLOB")
    4 bytes   little-endian uint32 header length L
    L bytes   UTF-8 JSON header: {"kind", "version", "meta", "arrays": [...]}
    ...       each array's raw little-endian bytes, C order, in header order

Complex arrays are stored as float64 with a trailing axis of size 2
(real, imaginary), i.e. row-major complex pairs.  Output bytes depend only
on the inputs, which keeps files byte-identical across runs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"OTFSBLOB"


def _encode(a: np.ndarray):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        pairs = np.stack([a.real, a.imag], axis=-1).astype("<f8")
        return pairs, {"dtype": "complex", "shape": list(a.shape)}
    if a.dtype.kind in "iub":
        return a.astype("<i8"), {"dtype": "int", "shape": list(a.shape)}
    return a.astype("<f8"), {"dtype": "float", "shape": list(a.shape)}


def write_blob(path, kind: str, version: int, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    specs, payload = [], []
    for name, arr in arrays.items():
        raw, spec = _encode(arr)
        spec["name"] = name
        specs.append(spec)
        payload.append(np.ascontiguousarray(raw).tobytes())
    header = json.dumps(
        {"kind": kind, "version": version, "meta": meta, "arrays": specs},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)
    return path


def read_blob(path, kind: str | None = None):
    """Return ``(header, arrays)``; ``header`` holds kind, version and meta."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not an OTFS blob file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen])
    if kind is not None and header["kind"] != kind:
        raise ValueError(f"{path}: expected a {kind!r} file, found {header['kind']!r}")
    offset = 12 + hlen
    arrays = {}
    for spec in header.pop("arrays"):
        shape = tuple(spec["shape"])
        if spec["dtype"] == "complex":
            count = int(np.prod(shape, dtype=np.int64)) * 2
            raw = np.frombuffer(data, "<f8", count, offset)
            offset += raw.nbytes
            pairs = raw.reshape(shape + (2,))
            arrays[spec["name"]] = pairs[..., 0] + 1j * pairs[..., 1]
        else:
            dt = "<i8" if spec["dtype"] == "int" else "<f8"
            count = int(np.prod(shape, dtype=np.int64))
            raw = np.frombuffer(data, dt, count, offset)
            offset += raw.nbytes
            arrays[spec["name"]] = raw.reshape(shape).copy()
    return header, arrays
