"""Keyed random streams so every sample's randomness is independent of scheduling."""

import hashlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"seed keys must be non-negative, got {key}")
        return int(key)
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """
    Generator for the stream identified by (seed, *keys).

    String keys (sample ids, stream names) are hashed to 64-bit integers.
    """
    entropy = [_key_to_int(seed), *(_key_to_int(k) for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
