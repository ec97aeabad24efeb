"""Deterministic seed derivation.

Every run owns a single integer seed; all randomness (synthesis, model init,
shuffling, harness seeds) flows from it through `derive_seed`, which hashes the
master seed together with a purpose tag and optional indices. Hashing uses
blake2b so derived streams are stable across platforms and Python processes
(the builtin `hash` is salted per process and must not be used here).
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, purpose: str, *indices: int) -> int:
    """Derive a 64-bit child seed from (seed, purpose tag, indices)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed) & _MASK64).encode())
    h.update(b"\x00")
    h.update(purpose.encode())
    for ix in indices:
        h.update(b"\x00")
        h.update(str(int(ix)).encode())
    return (int(seed) ^ int.from_bytes(h.digest(), "little")) & _MASK64


def generator(seed: int, purpose: str = "", *indices: int) -> np.random.Generator:
    """PCG64 generator for one derived stream."""
    if purpose:
        seed = derive_seed(seed, purpose, *indices)
    return np.random.Generator(np.random.PCG64(seed & _MASK64))
