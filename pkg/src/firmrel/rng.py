"""Deterministic seed derivation shared by every stochastic component."""

from __future__ import annotations

import hashlib

import numpy as np

MASK63 = (1 << 63) - 1


def mix_seed(*parts: int | str) -> int:
    """Collapse (seed, tag, ...) into one 63-bit seed, stable across runs."""
    h = hashlib.blake2s(digest_size=8)
    for p in parts:
        if isinstance(p, str):
            h.update(b"s" + p.encode("utf-8"))
        else:
            h.update(b"i" + int(p).to_bytes(16, "little", signed=True))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little") & MASK63


def make_rng(*parts: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(mix_seed(*parts)))
