"""Deterministic splittable random streams.

Every source of randomness in the engine is derived from a user seed plus a
tuple of integer keys (domain tag, sample index, coalition bitmask, ...). The
derivation goes through ``numpy.random.SeedSequence``, which hashes its
entropy pool platform-independently, so any (seed, keys) pair names the same
stream on every machine and regardless of evaluation order.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF

# Domain tags keep streams from different subsystems disjoint even when the
# remaining keys collide.
DOMAIN_PERMUTATIONS = 0x01
DOMAIN_BACKGROUND = 0x02
DOMAIN_SPRITES = 0x03
DOMAIN_GLOBAL = 0x04
DOMAIN_CALIBRATION = 0x05
DOMAIN_GAMES = 0x06


def _as_entropy(key: int | str) -> int:
    if isinstance(key, str):
        return int.from_bytes(hashlib.blake2s(key.encode("utf-8"), digest_size=8).digest(), "little")
    return int(key) & _MASK64


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Generator for the stream named by (seed, *keys)."""
    entropy = [_as_entropy(seed)] + [_as_entropy(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def spawn_seed(seed: int, *keys: int | str) -> int:
    """A 64-bit child seed derived from (seed, *keys), for nesting configs."""
    entropy = [_as_entropy(seed)] + [_as_entropy(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)
