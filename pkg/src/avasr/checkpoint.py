"""Checkpoint container: a JSON manifest plus one binary blob.

The manifest maps each tensor name to its shape and byte offset; the blob
holds 64-bit little-endian IEEE-754 values concatenated in manifest order.
Arbitrary JSON metadata (run config, step counter) rides along under "meta".
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"


def save_checkpoint(directory, arrays, meta=None):
    """Write named float64 arrays plus metadata into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    offset = 0
    with open(directory / BLOB_NAME, "wb") as blob:
        for name, value in arrays.items():
            data = np.ascontiguousarray(np.asarray(value, dtype="<f8"))
            entries[name] = {"shape": list(data.shape), "offset": offset}
            blob.write(data.tobytes())
            offset += data.nbytes
    manifest = {"format": "avasr-checkpoint-v1", "dtype": "<f8", "tensors": entries}
    if meta is not None:
        manifest["meta"] = meta
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(directory):
    """Read a checkpoint back as (dict of float64 arrays, meta dict)."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    if manifest.get("dtype") != "<f8":
        raise ValueError(f"unsupported checkpoint dtype {manifest.get('dtype')!r}")
    blob = (directory / BLOB_NAME).read_bytes()
    arrays = {}
    for name, entry in manifest["tensors"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        arrays[name] = arr.reshape(shape).copy()
    return arrays, manifest.get("meta", {})
