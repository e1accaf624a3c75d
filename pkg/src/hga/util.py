"""Shared helpers: seeded RNG derivation and stable JSON."""

from __future__ import annotations

import hashlib
import json

import numpy as np

__all__ = ["derive_rng", "stable_json"]

_MASK64 = (1 << 64) - 1


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"rng key must be int or str, got {type(key).__name__}")


def derive_rng(*keys) -> np.random.Generator:
    """Deterministic PCG64 generator derived from a tuple of int/str keys.

    Distinct key tuples give independent streams; the same tuple always
    gives the same stream, so no wall-clock or OS entropy leaks in.
    """
    entropy = [_key_int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def stable_json(payload) -> str:
    """JSON with sorted keys and fixed separators, for byte-stable outputs."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
