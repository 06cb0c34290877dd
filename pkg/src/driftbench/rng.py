"""Deterministic random-number plumbing.

All randomness in the package flows through numpy's PCG64 generator, seeded
through ``numpy.random.SeedSequence``. Streams are derived ("split") from a
master seed plus a tuple of context keys (strings and integers), so any
operation is a pure function of its inputs and seed, independent of execution
order or thread scheduling. String keys are mapped to 64-bit integers with
BLAKE2b, which is stable across platforms and Python versions (unlike the
builtin ``hash``).
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    if isinstance(key, str):
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    if isinstance(key, float):
        if not float(key).is_integer():
            raise TypeError(f"non-integer float rng key: {key!r}")
        return int(key) & 0xFFFFFFFFFFFFFFFF
    raise TypeError(f"unsupported rng key type: {type(key).__name__}")


def seed_sequence(*keys) -> np.random.SeedSequence:
    """Build a SeedSequence from a tuple of integer/string keys."""
    if not keys:
        raise ValueError("at least one seed key required")
    return np.random.SeedSequence([_key_int(k) for k in keys])


def make_rng(*keys) -> np.random.Generator:
    """PCG64 generator deterministically derived from the given keys."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*keys)))


def derive_seed(*keys) -> int:
    """Derive a child 64-bit seed; usable as a fresh master seed downstream."""
    return int(seed_sequence(*keys).generate_state(1, np.uint64)[0])
