"""Small persistence helpers: JSON headers plus raw float64 array blobs.

Binary layout is row-major little-endian float64 throughout; the JSON side
records array names, shapes, and offsets (in value counts, not bytes) so a
single .f64 file can carry several arrays.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def write_f64_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> list[dict]:
    """Append arrays into one blob; returns the manifest for the JSON header."""
    manifest = []
    offset = 0
    with open(path, "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(arr.tobytes())
            manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    return manifest


def read_f64_arrays(path: str | Path, manifest: list[dict]) -> dict[str, np.ndarray]:
    flat = np.fromfile(path, dtype="<f8")
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        out[entry["name"]] = flat[start:start + size].reshape(shape).astype(np.float64)
    return out
