"""Binary tensor archive used by checkpointing.

Layout: 8-byte magic, little-endian uint64 manifest length, JSON manifest,
then raw little-endian float payloads back to back. The manifest records
(name, shape, element size, byte offset) per entry plus free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"IFTA0001"


class ArchiveError(RuntimeError):
    """Corrupt, truncated, or inconsistent archive file."""


def save_archive(path, arrays: dict, meta: dict | None = None) -> None:
    entries = []
    offset = 0
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float64:
            dtype = "<f8"
        else:
            arr = arr.astype(np.float32)
            dtype = "<f4"
        raw = arr.astype(dtype).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "elem_size": arr.dtype.itemsize,
            "dtype": dtype,
            "offset": offset,
        })
        payloads.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": meta or {}, "entries": entries, "payload_size": offset}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for raw in payloads:
            fh.write(raw)


def load_archive(path) -> tuple[dict, dict]:
    """Return ({name: array}, meta). Raises ArchiveError on any damage."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise ArchiveError(f"{path}: not a tensor archive")
    (mlen,) = struct.unpack_from("<Q", blob, len(MAGIC))
    header_end = len(MAGIC) + 8 + mlen
    if len(blob) < header_end:
        raise ArchiveError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[len(MAGIC) + 8 : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: unreadable manifest: {exc}") from exc
    expected = header_end + manifest.get("payload_size", 0)
    if len(blob) != expected:
        raise ArchiveError(f"{path}: payload size mismatch (expected {expected} bytes, file has {len(blob)})")
    arrays = {}
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = header_end + entry["offset"]
        stop = start + count * entry["elem_size"]
        if stop > len(blob):
            raise ArchiveError(f"{path}: entry {entry['name']!r} runs past end of file")
        arrays[entry["name"]] = np.frombuffer(blob[start:stop], dtype=entry["dtype"]).reshape(shape).copy()
    return arrays, manifest.get("meta", {})
