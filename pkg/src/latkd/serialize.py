"""Canonical serialization and content hashing.

Every persisted artifact (models, schemas, soft labels, manifests) is reduced
to canonical JSON bytes before hashing, so identical content always maps to
the identical digest regardless of dict insertion order or platform. Float
values round-trip exactly: JSON emits the shortest repr that parses back to
the same float64, and bulk tensors are embedded as raw little-endian bytes.
"""
from __future__ import annotations

import base64
import hashlib
import json
from typing import Any

import numpy as np


def encode_array(arr: np.ndarray) -> dict:
    """Embed an ndarray as a JSON-safe dict with exact bytes."""
    a = np.ascontiguousarray(arr)
    return {
        "__ndarray__": base64.b64encode(a.tobytes()).decode("ascii"),
        "dtype": a.dtype.str,
        "shape": list(a.shape),
    }


def decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["__ndarray__"])
    arr = np.frombuffer(raw, dtype=np.dtype(obj["dtype"]))
    return arr.reshape(obj["shape"]).copy()


def is_encoded_array(obj: Any) -> bool:
    return isinstance(obj, dict) and "__ndarray__" in obj


def canonical_json_bytes(obj: Any) -> bytes:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def content_hash(obj: Any) -> str:
    """Digest of an object's canonical JSON form."""
    return sha256_hex(canonical_json_bytes(obj))


def strip_volatile(obj: Any, volatile_keys: frozenset[str]) -> Any:
    """Recursively drop keys that vary between otherwise-identical runs
    (wall-clock timings, creation timestamps) before hashing."""
    if isinstance(obj, dict):
        return {
            k: strip_volatile(v, volatile_keys)
            for k, v in obj.items()
            if k not in volatile_keys
        }
    if isinstance(obj, list):
        return [strip_volatile(v, volatile_keys) for v in obj]
    return obj


def derive_seed(seed: int, *tags: object) -> int:
    """Stable 63-bit seed derived from a master seed and a tag path.

    Used everywhere a sub-task (a frame, a boosting round, a repeat run)
    needs its own RNG stream that is reproducible independent of execution
    order.
    """
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "big") >> 1


def seeded_rng(seed: int, *tags: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *tags))
