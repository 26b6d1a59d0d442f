"""Versioned checkpoint container shared by the codec and the diffusion stack.

A checkpoint is a zip of named float arrays (numpy ``.npz``) plus a JSON
metadata header stored under a reserved key. The header always carries the
format name and version so stale files fail loudly instead of loading into
the wrong model.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT_NAME = "texpose-checkpoint"
FORMAT_VERSION = 1

_META_KEY = "__meta__"


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or from a wrong version."""


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray], metadata: dict) -> None:
    """Write named arrays and a metadata header to ``path``.

    Args:
        path: destination file; parent directory must exist.
        arrays: name -> array. Names must not collide with the reserved
            metadata key.
        metadata: JSON-serializable header. ``format`` and ``format_version``
            are added automatically.
    """
    if _META_KEY in arrays:
        raise CheckpointError(f"array name {_META_KEY!r} is reserved")
    header = dict(metadata)
    header["format"] = FORMAT_NAME
    header["format_version"] = FORMAT_VERSION
    payload = {name: np.asarray(arr) for name, arr in arrays.items()}
    payload[_META_KEY] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint, returning ``(arrays, metadata)``.

    Rejects files that lack the header or were written by a different
    format version.
    """
    try:
        with np.load(path, allow_pickle=False) as data:
            if _META_KEY not in data:
                raise CheckpointError(f"{path}: missing metadata header")
            header = json.loads(bytes(data[_META_KEY]).decode("utf-8"))
            arrays = {name: data[name] for name in data.files if name != _META_KEY}
    except (OSError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if header.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} "
            f"(expected {FORMAT_VERSION})"
        )
    return arrays, header


def array_checksum(arrays: Mapping[str, np.ndarray]) -> str:
    """sha256 over names, dtypes, shapes and raw bytes, in sorted name order."""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        digest.update(name.encode("utf-8"))
        digest.update(str(arr.dtype).encode("ascii"))
        digest.update(str(arr.shape).encode("ascii"))
        digest.update(arr.tobytes())
    return digest.hexdigest()
