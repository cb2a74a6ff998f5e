"""Seeding, hashing and number formatting helpers."""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash(text: str, seed: int = 0) -> int:
    """Process-independent 64-bit hash of ``text`` keyed by ``seed``."""
    key = (seed & _MASK64).to_bytes(8, "little")
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Generator derived from ``seed`` and a tuple of stream keys.

    String keys are hashed, so the stream for e.g. one anchor code does not
    depend on the order in which anchors are processed.
    """
    entropy = [seed & _MASK64]
    for k in keys:
        entropy.append(stable_hash(k) if isinstance(k, str) else int(k) & _MASK64)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def fmt_float(x: float, digits: int = 9) -> str:
    """Fixed decimal notation (never exponent form) with ``digits`` significant digits."""
    x = float(x)
    if x == 0.0:
        return "0"
    s = np.format_float_positional(x, precision=digits, unique=False, fractional=False, trim="-")
    return s
