"""Seed handling shared by every stochastic routine.

All randomness flows through :func:`make_rng`, which wraps numpy's PCG64.
Sub-streams are derived with :func:`child_seed`: the child is the first 8
bytes of a BLAKE2b digest of the parent seed and a sequence of role tags,
so that the same (seed, tags) pair produces the same stream on every
platform and independent of evaluation order.
"""

import hashlib

import numpy as np


def child_seed(seed, *tags):
    """Derive a 64-bit child seed from ``seed`` and any number of tags."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest(), "little")


def make_rng(seed, *tags):
    if tags:
        seed = child_seed(seed, *tags)
    return np.random.Generator(np.random.PCG64(int(seed) % 2**64))
