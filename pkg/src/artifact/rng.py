"""Seed derivation. Every random stream is a pure function of its key."""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1

# purpose tags, fixed so streams never collide across uses
PURPOSE = {
    "coords": 1,
    "edges": 2,
    "walk": 3,
    "fast": 4,
    "sample": 5,
    "pairs": 6,
    "trial": 7,
    "centers": 8,
    "source": 9,
}


def derive_seed(*parts) -> int:
    """64-bit seed from an ordered tuple of ints/strings (blake2b)."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def generator(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def splitmix64(x: int) -> int:
    """Reference (pure Python) splitmix64 finaliser; mirrors the JIT kernel."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def trial_seed(master: int, n: int, t: int) -> int:
    return derive_seed("trial", master, n, t)
