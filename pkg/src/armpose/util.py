"""Small shared helpers: deterministic RNG substreams and JSON output."""

from __future__ import annotations

import json

import numpy as np

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent RNG stream addressed by (seed, *path).

    Built on the counter-based Philox generator keyed with the seed and an
    FNV-1a fold of the path, so streams are reproducible bit-for-bit across
    platforms and independent of the order they are drawn in. Use one stream
    per scene / restart / episode index; never share streams across workers.
    """
    acc = _FNV_OFFSET
    for p in path:
        acc = ((acc ^ (int(p) & _MASK64)) * _FNV_PRIME) & _MASK64
    key = np.array([int(seed) & _MASK64, acc], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def wrap_deg(angle: float) -> float:
    """Wraps to (-180, 180]."""
    a = (angle + 180.0) % 360.0 - 180.0
    return 180.0 if a == -180.0 else a


def dump_json(obj, fh=None, indent=2):
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    text = json.dumps(obj, sort_keys=True, indent=indent) + "\n"
    if fh is None:
        return text
    fh.write(text)
    return text
