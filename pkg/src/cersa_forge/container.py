"""Checkpoint container: a JSON manifest followed by a raw tensor blob.

File layout::

    b"CERSACK1"                 8-byte magic
    manifest length             unsigned 64-bit little endian
    manifest                    UTF-8 JSON
    blob                        concatenated little-endian IEEE-754 tensors

Each manifest tensor entry carries ``name``, ``shape``, ``dtype`` ("f64" or
"f32"), ``offset`` and ``length`` in bytes relative to the blob start.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"CERSACK1"
FORMAT_VERSION = 1
DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}


class ContainerError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)


def _dtype_name(arr: np.ndarray) -> str:
    if arr.dtype == np.float64:
        return "f64"
    if arr.dtype == np.float32:
        return "f32"
    raise ContainerError(f"unsupported dtype {arr.dtype}; only float32/float64 are stored")


def dumps(ckpt: Checkpoint) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        dname = _dtype_name(arr)
        data = np.ascontiguousarray(arr, dtype=DTYPES[dname]).tobytes()
        entries.append(
            {
                "name": name,
                "shape": [int(s) for s in arr.shape],
                "dtype": dname,
                "offset": offset,
                "length": len(data),
            }
        )
        chunks.append(data)
        offset += len(data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "metadata": ckpt.metadata,
        "tensors": entries,
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":"), allow_nan=False)
    head_bytes = head.encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head_bytes)) + head_bytes + b"".join(chunks)


def loads(raw: bytes) -> Checkpoint:
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise ContainerError("not a checkpoint container (bad magic)")
    (n,) = struct.unpack("<Q", raw[8:16])
    if 16 + n > len(raw):
        raise ContainerError(f"manifest length {n} runs past end of file")
    try:
        manifest = json.loads(raw[16 : 16 + n].decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ContainerError(f"manifest is not UTF-8 (byte {exc.start})") from exc
    except json.JSONDecodeError as exc:
        raise ContainerError(
            f"malformed manifest JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(manifest, dict) or not isinstance(manifest.get("tensors"), list):
        raise ContainerError("manifest must be an object with a 'tensors' list")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ContainerError(f"unsupported format_version {manifest.get('format_version')!r}")
    blob = memoryview(raw)[16 + n :]
    tensors: dict[str, np.ndarray] = {}
    spans = []
    for idx, t in enumerate(manifest["tensors"]):
        try:
            name, shape, dname = t["name"], tuple(t["shape"]), t["dtype"]
            offset, length = int(t["offset"]), int(t["length"])
        except (KeyError, TypeError) as exc:
            raise ContainerError(f"tensor entry {idx} is incomplete: {exc}") from exc
        if dname not in DTYPES:
            raise ContainerError(f"tensor {name!r}: unknown dtype {dname!r}")
        if any(not isinstance(s, int) or s < 0 for s in shape):
            raise ContainerError(f"tensor {name!r}: invalid shape {list(shape)}")
        expected = int(np.prod(shape, dtype=np.int64)) * DTYPES[dname].itemsize
        if length != expected:
            raise ContainerError(
                f"tensor {name!r}: length {length} does not match shape {list(shape)} ({expected})"
            )
        if offset < 0 or offset + length > len(blob):
            raise ContainerError(f"tensor {name!r}: bytes [{offset}, {offset + length}) out of bounds")
        if name in tensors:
            raise ContainerError(f"duplicate tensor name {name!r}")
        spans.append((offset, offset + length, name))
        arr = np.frombuffer(blob[offset : offset + length], dtype=DTYPES[dname]).reshape(shape)
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ContainerError(f"tensors {n0!r} and {n1!r} overlap")
    return Checkpoint(tensors, manifest.get("metadata", {}))


def save(path: Path | str, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(ckpt))
    return path


def load(path: Path | str) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc.strerror}") from exc
    return loads(raw)
