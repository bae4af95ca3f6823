"""Two-layer mean-aggregation message passing over ego subgraphs.

Pretrained with a symmetric InfoNCE objective that pulls each firm's
center-node graph embedding toward its own text feature vector and away
from other firms', then frozen for all later stages. Message passing
ignores edge direction; the union 1-hop neighborhood defines aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EdgeView, Subgraph, SupplyGraph, ego_subgraph
from .optim import MomentumSGD
from .rng import make_rng

HIDDEN_DIM = 64


class GraphEncoder:
    """h^{l+1} = tanh(W_self h^l + W_nbr mean_{j~i} h^l_j); two layers.

    ``head`` projects the hidden space back to the text-feature space and is
    trained jointly during contrastive pretraining only.
    """

    def __init__(self, in_dim: int, hidden: int = HIDDEN_DIM, seed: int = 0, dtype=np.float64):
        rng = make_rng(seed, "graph_encoder_init")

        def lin(a, b):
            return ((rng.random((a, b)) * 2 - 1) / np.sqrt(a)).astype(dtype)

        self.in_dim = in_dim
        self.hidden = hidden
        self.params: dict[str, np.ndarray] = {
            "w_self1": lin(in_dim, hidden),
            "w_nbr1": lin(in_dim, hidden),
            "w_self2": lin(hidden, hidden),
            "w_nbr2": lin(hidden, hidden),
            "head": lin(hidden, in_dim),
        }
        self.frozen = False

    def freeze(self) -> None:
        for a in self.params.values():
            a.flags.writeable = False
        self.frozen = True

    def encode(self, sub: Subgraph, features: dict[int, np.ndarray]) -> np.ndarray:
        """Per-member embeddings (k, hidden), row 0 the center."""
        h2, _ = self._forward(sub, features)
        return h2

    def _forward(self, sub: Subgraph, features: dict[int, np.ndarray]):
        for m in sub.members:
            if m not in features:
                raise ValueError(f"missing feature row for firm {m}")
        dtype = self.params["w_self1"].dtype
        x = np.stack([features[m] for m in sub.members]).astype(dtype)
        mix = _mean_matrix(sub).astype(dtype)
        p = self.params
        mx = mix @ x
        a1 = x @ p["w_self1"] + mx @ p["w_nbr1"]
        h1 = np.tanh(a1)
        mh1 = mix @ h1
        a2 = h1 @ p["w_self2"] + mh1 @ p["w_nbr2"]
        h2 = np.tanh(a2)
        return h2, (x, mix, mx, h1, mh1, h2)

    def _backward(self, cache, dh2: np.ndarray, grads: dict[str, np.ndarray]) -> None:
        x, mix, mx, h1, mh1, h2 = cache
        p = self.params
        da2 = dh2 * (1.0 - h2 * h2)
        grads["w_self2"] += h1.T @ da2
        grads["w_nbr2"] += mh1.T @ da2
        dh1 = da2 @ p["w_self2"].T + mix.T @ (da2 @ p["w_nbr2"].T)
        da1 = dh1 * (1.0 - h1 * h1)
        grads["w_self1"] += x.T @ da1
        grads["w_nbr1"] += mx.T @ da1


def _mean_matrix(sub: Subgraph) -> np.ndarray:
    """Row-normalized undirected adjacency over subgraph members."""
    k = len(sub.members)
    pos = {m: i for i, m in enumerate(sub.members)}
    m = np.zeros((k, k))
    for a, b in sub.local_edges:
        m[pos[a], pos[b]] = 1.0
        m[pos[b], pos[a]] = 1.0
    deg = m.sum(axis=1, keepdims=True)
    np.divide(m, deg, out=m, where=deg > 0)
    return m


# ---------------------------------------------------------------------------
# contrastive objective

def info_nce(graph_vecs: np.ndarray, text_vecs: np.ndarray, temperature: float) -> float:
    """Symmetric cross-entropy over cosine-similarity logits / temperature."""
    loss, _ = _info_nce_grad(graph_vecs, text_vecs, temperature)
    return loss


def _info_nce_grad(graph_vecs, text_vecs, temperature: float):
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(graph_vecs, dtype=np.float64)
    t = np.asarray(text_vecs, dtype=np.float64)
    if z.shape[0] != t.shape[0]:
        raise ValueError("graph and text batches must have equal length")
    n = z.shape[0]
    if n < 2:
        raise ValueError("need a batch of at least 2")
    zn_norm = np.linalg.norm(z, axis=1, keepdims=True)
    tn_norm = np.linalg.norm(t, axis=1, keepdims=True)
    zn = z / zn_norm
    tn = t / tn_norm
    s = zn @ tn.T / temperature

    def logsoftmax(m):
        mm = m - m.max(axis=1, keepdims=True)
        return mm - np.log(np.exp(mm).sum(axis=1, keepdims=True))

    lp_row = logsoftmax(s)
    lp_col = logsoftmax(s.T)
    diag = np.arange(n)
    loss = -0.5 * (lp_row[diag, diag].mean() + lp_col[diag, diag].mean())

    p_row = np.exp(lp_row)
    p_col = np.exp(lp_col)
    ds = 0.5 / n * (p_row + p_col.T)
    ds[diag, diag] -= 1.0 / n
    dzn = ds @ tn / temperature
    dz = (dzn - zn * (dzn * zn).sum(axis=1, keepdims=True)) / zn_norm
    return float(loss), dz


@dataclass
class ContrastiveConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    grad_clip: float = 1.0
    temperature: float = 0.07
    neighbor_cap: int = 32
    seed: int = 0


def pretrain_contrastive(
    graph: SupplyGraph,
    encoder: GraphEncoder,
    features: dict[int, np.ndarray],
    firms: list[int] | tuple[int, ...],
    visible_edges,
    cfg: ContrastiveConfig,
) -> tuple[GraphEncoder, list[float]]:
    """Align center-node graph embeddings with the firms' text features.

    Returns the frozen encoder and per-epoch mean losses.
    """
    if encoder.frozen:
        raise RuntimeError("encoder is already frozen")
    view = visible_edges if isinstance(visible_edges, EdgeView) else EdgeView(visible_edges)
    firms = sorted(firms)
    subs = {
        f: ego_subgraph(graph, f, view, cap=cfg.neighbor_cap, seed=cfg.seed) for f in firms
    }
    caches = {}
    text = np.stack([features[f] for f in firms])
    opt = MomentumSGD(encoder.params, lr=cfg.lr, momentum=cfg.momentum, grad_clip=cfg.grad_clip)
    rng = make_rng(cfg.seed, "contrastive")
    losses: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(firms))
        total, batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                continue
            z_rows = []
            for i in idx:
                h2, cache = encoder._forward(subs[firms[i]], features)
                caches[i] = cache
                z_rows.append(h2[0] @ encoder.params["head"])
            z = np.stack(z_rows)
            loss, dz = _info_nce_grad(z, text[idx], cfg.temperature)
            grads = {k: np.zeros_like(v) for k, v in encoder.params.items()}
            for row, i in enumerate(idx):
                cache = caches[i]
                h2 = cache[5]
                grads["head"] += np.outer(h2[0], dz[row])
                dh2 = np.zeros_like(h2)
                dh2[0] = encoder.params["head"] @ dz[row]
                encoder._backward(cache, dh2, grads)
            opt.step(encoder.params, grads)
            total += loss
            batches += 1
        losses.append(total / max(batches, 1))
    encoder.freeze()
    return encoder, losses


def retrieval_rank1_accuracy(
    encoder: GraphEncoder,
    graph: SupplyGraph,
    features: dict[int, np.ndarray],
    firms: list[int] | tuple[int, ...],
    visible_edges,
    neighbor_cap: int = 32,
    seed: int = 0,
) -> float:
    """Fraction of firms whose own text feature is the top cosine match."""
    view = visible_edges if isinstance(visible_edges, EdgeView) else EdgeView(visible_edges)
    firms = sorted(firms)
    z = np.stack(
        [
            encoder.encode(ego_subgraph(graph, f, view, cap=neighbor_cap, seed=seed), features)[0]
            @ encoder.params["head"]
            for f in firms
        ]
    )
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    t = np.stack([features[f] for f in firms])
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    sims = z @ t.T
    return float((sims.argmax(axis=1) == np.arange(len(firms))).mean())
