"""Versioned npz checkpoint containers: JSON meta plus named float64 arrays."""
from __future__ import annotations

import json

import numpy as np

from .errors import ContractError

FORMAT_VERSION = 1
_META_KEY = "__meta__"


def save_arrays(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    if _META_KEY in arrays:
        raise ContractError(f"array name {_META_KEY!r} is reserved")
    header = dict(meta)
    header["format_version"] = FORMAT_VERSION
    blob = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **{_META_KEY: blob}, **arrays)


def load_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z[_META_KEY]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ContractError(
                f"unsupported checkpoint version {meta.get('format_version')!r}")
        arrays = {k: z[k] for k in z.files if k != _META_KEY}
    return meta, arrays
