"""Deterministic description embedding: mean of seeded per-token basis vectors.

Stands in for a learned sentence encoder; same token sequence always maps to
the same unit vector, which keeps every downstream stage exactly reproducible.
"""

from __future__ import annotations

import numpy as np

from .data import SupplyGraph
from .rng import make_rng

FEATURE_DIM = 128


class TextEncoder:
    """Frozen token-hash embedding into R^dim (unit norm)."""

    def __init__(self, dim: int = FEATURE_DIM, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._basis: dict[int, np.ndarray] = {}

    def basis_vector(self, token: int) -> np.ndarray:
        """Seeded pseudo-random basis vector for one token id (cached)."""
        v = self._basis.get(token)
        if v is None:
            rng = make_rng(self.seed, "basis", token)
            v = rng.standard_normal(self.dim)
            v.flags.writeable = False
            self._basis[token] = v
        return v

    def embed(self, description: tuple[int, ...] | list[int]) -> np.ndarray:
        """Mean of the tokens' basis vectors, L2-normalized."""
        if len(description) == 0:
            raise ValueError("cannot embed an empty token sequence")
        acc = np.zeros(self.dim)
        for t in description:
            acc += self.basis_vector(t)
        acc /= len(description)
        return acc / np.linalg.norm(acc)

    def state_bytes(self) -> bytes:
        """Stable byte encoding of the frozen configuration (for checksums)."""
        return f"text_encoder dim={self.dim} seed={self.seed}".encode("utf-8")


def feature_matrix(graph: SupplyGraph, encoder: TextEncoder) -> dict[int, np.ndarray]:
    """Node feature rows keyed by firm id; also fills Company.features."""
    feats: dict[int, np.ndarray] = {}
    for cid in graph.ids:
        c = graph.companies[cid]
        v = encoder.embed(c.description)
        v.flags.writeable = False
        c.features = v
        feats[cid] = v
    return feats
