"""Versioned parameter checkpoints.

A checkpoint is an npz archive holding a JSON header (format version, layer
specs, vocabulary hash, arbitrary metadata) plus the named float64 parameter
arrays.  Write-read round trips are bit-exact.
"""
from __future__ import annotations

import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError

FORMAT_VERSION = 1
_HEADER_KEY = "__header__"
_ARRAY_PREFIX = "array/"


def save_checkpoint(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write header + arrays atomically; stamps the format version."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    full_header = dict(header)
    full_header["format_version"] = FORMAT_VERSION
    payload: dict[str, np.ndarray] = {_HEADER_KEY: np.frombuffer(json.dumps(full_header).encode(), dtype=np.uint8)}
    for name, values in arrays.items():
        payload[_ARRAY_PREFIX + name] = np.asarray(values, dtype=np.float64)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            np.savez(handle, **payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint; raises CheckpointError on corruption or version skew."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            if _HEADER_KEY not in archive:
                raise CheckpointError(f"{path}: missing checkpoint header")
            try:
                header = json.loads(bytes(archive[_HEADER_KEY]).decode())
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise CheckpointError(f"{path}: corrupted header: {exc}") from exc
            arrays = {
                name[len(_ARRAY_PREFIX):]: archive[name]
                for name in archive.files
                if name.startswith(_ARRAY_PREFIX)
            }
    except (zipfile.BadZipFile, OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version!r} unsupported (expected {FORMAT_VERSION})"
        )
    return header, arrays
