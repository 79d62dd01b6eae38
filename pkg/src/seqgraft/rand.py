"""Deterministic, platform-stable RNG streams keyed by arbitrary labels."""

from __future__ import annotations

import hashlib

import numpy as np


def rng_for(*keys) -> np.random.Generator:
    """Independent generator for a (seed, purpose, index, ...) key tuple.

    Python's salted hash() is avoided so streams are stable across runs
    and platforms.
    """
    digest = hashlib.blake2b("|".join(str(k) for k in keys).encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))
