"""Checkpoint I/O: a JSON manifest next to one little-endian binary blob."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT = "stageprune-checkpoint"
VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> Path:
    """Write ``path`` (manifest) and ``path`` with suffix ``.bin`` (blob).

    Tensors are stored in the mapping's iteration order. Returns the
    manifest path.
    """
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    entries = []
    offset = 0
    with open(blob_path, "wb") as fh:
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = np.ascontiguousarray(le).tobytes()
            fh.write(raw)
            entries.append({
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.name,
                "offset": offset,
                "nbytes": len(raw),
            })
            offset += len(raw)
    manifest = {"format": FORMAT, "version": VERSION, "blob": blob_path.name,
                "tensors": entries, "meta": meta or {}}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of :func:`save_checkpoint`; returns ``(tensors, meta)``."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} manifest")
    raw = (path.parent / manifest["blob"]).read_bytes()
    tensors = {}
    for e in manifest["tensors"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        end = e["offset"] + e["nbytes"]
        if end > len(raw):
            raise ValueError(f"blob truncated while reading {e['name']}")
        arr = np.frombuffer(raw[e["offset"]:end], dtype=dt).reshape(e["shape"])
        tensors[e["name"]] = arr.astype(dt.newbyteorder("="))
    return tensors, manifest.get("meta", {})
