"""Counter-based seed derivation.

Every random choice in the package draws from a ``numpy`` PCG64 stream whose
seed is derived from one user seed and a tuple of labels.  The mixing step is
SplitMix64, so derived seeds are stable across platforms and Python versions
(string labels are hashed with BLAKE2b, never with the salted builtin
``hash``).
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _label_code(label: int | str) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & MASK64
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, *labels: int | str) -> int:
    """Derive a 64-bit child seed from ``seed`` and a path of labels.

    >>> derive_seed(1, "split") == derive_seed(1, "split")
    True
    """
    state = splitmix64(int(seed) & MASK64)
    for label in labels:
        state = splitmix64(state ^ _label_code(label))
    return state


def make_rng(seed: int, *labels: int | str) -> np.random.Generator:
    if labels:
        seed = derive_seed(seed, *labels)
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))
