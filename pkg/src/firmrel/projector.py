"""The single trainable affine map from graph-embedding space to LM space."""

from __future__ import annotations

import numpy as np

from .rng import make_rng


class Projector:
    """y = W h + b, mapping hidden graph vectors to LM input embeddings."""

    def __init__(self, w: np.ndarray, b: np.ndarray):
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ValueError("W must be (d_lm, d_g) and b (d_lm,)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("projector parameters must be finite")
        self.w = w
        self.b = b

    @property
    def d_g(self) -> int:
        return self.w.shape[1]

    @property
    def d_lm(self) -> int:
        return self.w.shape[0]

    def project(self, node_embeddings: np.ndarray) -> np.ndarray:
        """Map (k, d_g) node embeddings to (k, d_lm) graph tokens."""
        h = np.atleast_2d(np.asarray(node_embeddings))
        if h.shape[1] != self.d_g:
            raise ValueError(f"expected vectors of dimension {self.d_g}, got {h.shape[1]}")
        return h @ self.w.T + self.b

    def astype(self, dtype) -> "Projector":
        return Projector(self.w.astype(dtype), self.b.astype(dtype))


def init_projector(d_g: int, d_lm: int, seed: int, dtype=np.float32) -> Projector:
    """W ~ uniform(+-1/sqrt(d_g)), b = 0."""
    if d_g < 1 or d_lm < 1:
        raise ValueError("dimensions must be positive")
    rng = make_rng(seed, "projector_init")
    bound = 1.0 / np.sqrt(d_g)
    w = (rng.random((d_lm, d_g)) * 2 - 1) * bound
    return Projector(w.astype(dtype), np.zeros(d_lm, dtype=dtype))
