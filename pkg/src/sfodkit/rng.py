"""Deterministic RNG stream derivation.

Every source of randomness in the package is a child generator derived
from integer/string key tuples, so parallel and serial execution consume
identical streams and runs are reproducible bit-for-bit from one seed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_int(*keys) -> int:
    """Map a tuple of keys to a stable 64-bit integer (sha256-based, not salted)."""
    text = "\x1f".join(str(k) for k in keys)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def child_rng(*keys) -> np.random.Generator:
    """Fresh Generator keyed by the given tuple; identical keys give identical streams."""
    return np.random.default_rng(np.random.SeedSequence(derive_int(*keys)))
