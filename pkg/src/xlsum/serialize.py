"""Deterministic on-disk formats and atomic file writes.

Checkpoints and similarity-model files must be byte-identical across runs
with the same seed, so we avoid zip-based containers (which embed
timestamps) and write a fixed layout instead: a magic string, a
length-prefixed JSON header, then the raw float64 buffers in header order.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from typing import Any

import numpy as np

MAGIC = b"XLSUMARR1\n"


def write_bytes_atomic(path: str, payload: bytes) -> None:
    """Write bytes via a temp file + rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def dump_json(obj: Any) -> str:
    """Canonical JSON: sorted keys, no float repr surprises, trailing newline."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def save_arrays(path: str, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Save named float64 arrays plus a JSON header in a deterministic layout."""
    names = sorted(arrays)
    meta = {
        "header": header,
        "arrays": {name: list(arrays[name].shape) for name in names},
    }
    head = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    chunks = [MAGIC, struct.pack("<Q", len(head)), head]
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        chunks.append(arr.tobytes())
    write_bytes_atomic(path, b"".join(chunks))


def load_arrays(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise ValueError(f"not an xlsum array file: {path}")
    offset = len(MAGIC)
    (head_len,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    meta = json.loads(blob[offset : offset + head_len].decode("utf-8"))
    offset += head_len
    arrays: dict[str, np.ndarray] = {}
    for name in sorted(meta["arrays"]):
        shape = tuple(meta["arrays"][name])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=np.float64, count=count, offset=offset)
        arrays[name] = arr.reshape(shape).copy()
        offset += count * 8
    return meta["header"], arrays
