"""Versioned checkpoint container.

A checkpoint is an ``.npz`` archive holding a JSON header (format version,
model kind, config, ordered parameter names) plus one float64 array per
parameter. Writing is byte-deterministic, so equal models give equal digests.
"""
from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT_VERSION = 1
_HEADER = "__header__"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, kind: str, config: Mapping, params: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": dict(config),
        "params": [{"name": k, "shape": list(np.shape(v))} for k, v in params.items()],
    }
    blob = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    arrays = {_HEADER: blob}
    for i, (name, value) in enumerate(params.items()):
        arrays[f"p{i:04d}"] = np.ascontiguousarray(value, dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path, expect_kind: str | None = None):
    """Return ``(kind, config, OrderedDict[name -> array])``."""
    with np.load(path, allow_pickle=False) as archive:
        if _HEADER not in archive.files:
            raise CheckpointError(f"{path}: not a checkpoint (no header)")
        header = json.loads(archive[_HEADER].tobytes().decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
        kind = header["kind"]
        if expect_kind is not None and kind != expect_kind:
            raise CheckpointError(f"{path}: expected a {expect_kind!r} checkpoint, found {kind!r}")
        params = OrderedDict()
        for i, entry in enumerate(header["params"]):
            value = archive[f"p{i:04d}"]
            if list(value.shape) != entry["shape"]:
                raise CheckpointError(f"{path}: shape mismatch for {entry['name']}")
            params[entry["name"]] = value
    return kind, header["config"], params


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
