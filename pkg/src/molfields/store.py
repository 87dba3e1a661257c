"""Versioned binary container for checkpoints, field dumps and embeddings.

Layout::

    b"MOLF"            magic
    uint16 LE          format version
    uint32 LE          header length H
    H bytes            UTF-8 JSON header (kind, meta, array table, crc32)
    payload            arrays back to back, little-endian, C order

Floats are stored as ``<f8`` and integer arrays as ``<i8``.
"""

import hashlib
import json
import os
import struct
import zlib

import numpy as np

MAGIC = b"MOLF"
VERSION = 1


class CorruptFileError(IOError):
    """Truncated, damaged or unrecognised container file."""


class VersionMismatchError(CorruptFileError):
    pass


def config_hash(config) -> str:
    """Short stable digest of a JSON-serialisable config tree."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _dtype_code(arr):
    if np.issubdtype(arr.dtype, np.floating):
        return "<f8"
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
        return "<i8"
    raise TypeError(f"cannot store dtype {arr.dtype}")


def dumps(kind: str, arrays: dict, meta: dict | None = None) -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        raw = np.ascontiguousarray(arr, dtype=code).tobytes()
        table.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "kind": kind,
        "meta": meta or {},
        "arrays": table,
        "payload_bytes": len(payload),
        "crc32": zlib.crc32(payload),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<HI", VERSION, len(hbytes)) + hbytes + payload


def loads(blob: bytes, kind: str | None = None):
    """Decode a container; returns ``(kind, arrays, meta)``."""
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise CorruptFileError("not a molfields container (bad magic)")
    version, hlen = struct.unpack("<HI", blob[4:10])
    if version != VERSION:
        raise VersionMismatchError(f"container version {version}, expected {VERSION}")
    if len(blob) < 10 + hlen:
        raise CorruptFileError("truncated header")
    try:
        header = json.loads(blob[10:10 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CorruptFileError(f"unreadable header: {err}") from None
    payload = blob[10 + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CorruptFileError(f"payload is {len(payload)} bytes, header declares {header['payload_bytes']} (truncated?)")
    if zlib.crc32(payload) != header["crc32"]:
        raise CorruptFileError("payload checksum mismatch")
    if kind is not None and header["kind"] != kind:
        raise CorruptFileError(f"expected a {kind!r} file, found {header['kind']!r}")
    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    return header["kind"], arrays, header["meta"]


def save(path, kind: str, arrays: dict, meta: dict | None = None):
    """Write atomically (temp file then rename)."""
    blob = dumps(kind, arrays, meta)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load(path, kind: str | None = None):
    with open(path, "rb") as fh:
        return loads(fh.read(), kind)


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)
