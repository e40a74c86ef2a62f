"""
Seed derivation.

Every random stream in the pipeline comes from a numpy Generator built
here, so that parallel and serial runs draw identical numbers.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, *keys) -> int:
    """
    Derive a child seed from a root seed and a sequence of keys.

    The keys are hashed with BLAKE2b, so the result is stable across
    processes and Python versions (unlike the builtin ``hash``).

    Args:
        seed: Root seed
        *keys: Strings or integers identifying the stream (ticker names,
            path index, ...)

    Returns:
        64-bit unsigned integer seed
    """
    digest = hashlib.blake2b(digest_size=8)
    digest.update(str(int(seed)).encode("utf-8"))
    for key in keys:
        digest.update(b"\x1f")
        digest.update(str(key).encode("utf-8"))
    return int.from_bytes(digest.digest(), "little")


def get_rng(seed: int, *keys) -> np.random.Generator:
    """Get a numpy generator for the stream identified by ``keys``."""
    if keys:
        return np.random.default_rng(derive_seed(seed, *keys))
    return np.random.default_rng(seed)
