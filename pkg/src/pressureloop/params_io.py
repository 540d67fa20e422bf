"""Shared checkpoint container: named parameter arrays + JSON metadata.

Backed by numpy's npz format; round-trips arrays bit-exactly. Metadata always
carries the container version and whatever the producer wants to embed
(command, config hash, seed, ...).
"""

from __future__ import annotations

import io
import json

import numpy as np

CONTAINER_VERSION = "1"
_META_KEY = "__meta__"


def save_params(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta.setdefault("container_version", CONTAINER_VERSION)
    payload = {k: np.ascontiguousarray(v) for k, v in params.items()}
    if _META_KEY in payload:
        raise ValueError(f"reserved key {_META_KEY!r} in params")
    payload[_META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    if hasattr(path, "write"):
        np.savez(path, **payload)
    else:
        with open(path, "wb") as f:
            np.savez(f, **payload)


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z[_META_KEY]).decode())
        params = {k: z[k].copy() for k in z.files if k != _META_KEY}
    return params, meta


def params_equal(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> bool:
    if a.keys() != b.keys():
        return False
    return all(np.array_equal(a[k], b[k]) and a[k].dtype == b[k].dtype for k in a)


def save_params_bytes(params: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    save_params(buf, params, meta)
    return buf.getvalue()
