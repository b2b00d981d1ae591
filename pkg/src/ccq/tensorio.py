"""Raw float32 tensors with a JSON sidecar carrying the shape."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_tensor(path, array) -> None:
    """Write ``array`` as little-endian float32, row-major, plus ``<path>.json``."""
    a = np.ascontiguousarray(array, dtype="<f4")
    Path(path).write_bytes(a.tobytes())
    meta = {"shape": list(a.shape), "dtype": "float32", "byteorder": "little"}
    sidecar_path(path).write_text(json.dumps(meta) + "\n")


def load_tensor(path) -> np.ndarray:
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
        shape = tuple(int(d) for d in meta["shape"])
    except FileNotFoundError:
        raise FormatError(f"missing shape sidecar {side}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad sidecar {side}: {exc}") from None
    if meta.get("dtype", "float32") != "float32":
        raise FormatError(f"unsupported dtype {meta['dtype']!r}")
    raw = Path(path).read_bytes()
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != 4 * count:
        raise FormatError(f"{path} has {len(raw)} bytes, shape {shape} needs {4 * count}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
