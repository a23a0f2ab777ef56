"""Splittable, counter-based random streams derived from a single u64 seed."""

import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"Random stream keys must be non-negative, got {key}")
    return int(key)


def derive_seed_sequence(seed: int, *keys: Key) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        int(seed), spawn_key=tuple(_key_to_int(k) for k in keys)
    )


def derive_rng(seed: int, *keys: Key) -> np.random.Generator:
    """Generator for the stream named by ``keys`` under ``seed``.

    Streams with different keys are independent; the same (seed, keys) always
    yields the same numbers.
    """
    return np.random.Generator(np.random.Philox(derive_seed_sequence(seed, *keys)))


def derive_seed(seed: int, *keys: Key) -> int:
    """32-bit child seed, for APIs that take a seed rather than a generator."""
    return int(derive_seed_sequence(seed, *keys).generate_state(1)[0])
