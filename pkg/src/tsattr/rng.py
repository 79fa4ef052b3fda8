"""Deterministic RNG stream derivation.

All stochastic operations draw from streams derived as ``stream(seed, *keys)``
where the keys name the unit of work (e.g. a pixel id). Streams depend only on
the seed and keys, never on scheduling order, which is what makes per-pixel
parallelism reproducible and lets paired evaluations share perturbation draws.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_hash(*keys: str | int) -> int:
    """64-bit hash of the keys, stable across processes and platforms."""
    material = "\x1f".join(str(k) for k in keys).encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "little")


def stream(seed: int, *keys: str | int) -> np.random.Generator:
    """Independent generator for (seed, keys)."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, stable_hash(*keys)])
