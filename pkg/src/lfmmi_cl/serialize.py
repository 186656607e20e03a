"""Binary container for named float64 arrays plus JSON metadata.

Layout: ``MAGIC`` (8 bytes), format version (uint32 LE), header length
(uint64 LE), UTF-8 JSON header ``{"kind", "meta", "arrays": [[name, shape], ...]}``,
then each array's data as little-endian float64 in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInput

MAGIC = b"LFMMICLB"
VERSION = 1


def dumps(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    names = list(arrays)
    header = {
        "kind": kind,
        "meta": meta,
        "arrays": [[n, list(np.shape(arrays[n]))] for n in names],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes() for n in names)
    return MAGIC + struct.pack("<IQ", VERSION, len(hb)) + hb + body


def loads(data: bytes, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:8] != MAGIC:
        raise InvalidInput("not an array container (bad magic)")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise InvalidInput(f"unsupported container version {version}")
    pos = 8 + 12
    header = json.loads(data[pos : pos + hlen].decode())
    pos += hlen
    if kind is not None and header["kind"] != kind:
        raise InvalidInput(f"expected a {kind!r} container, found {header['kind']!r}")
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
        arrays[name] = arr.reshape(shape)
        pos += 8 * count
    if pos != len(data):
        raise InvalidInput("trailing bytes after container payload")
    return header["meta"], arrays


def save(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(kind, meta, arrays))


def load(path, kind: str | None = None):
    return loads(Path(path).read_bytes(), kind)


def save_reference_cache(path, uids, matrices) -> None:
    """Per-utterance reference posteriors/occupancies; ``None`` entries are dropped."""
    keep = [(u, m) for u, m in zip(uids, matrices) if m is not None]
    save(path, "reference-cache", {"uids": [u for u, _ in keep]}, {u: m for u, m in keep})


def load_reference_cache(path) -> dict[str, np.ndarray]:
    meta, arrays = load(path, "reference-cache")
    return {u: arrays[u] for u in meta["uids"]}
