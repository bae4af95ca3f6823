"""Comparison systems: GNN link predictors and a graph-blind text scorer.

Both GNN variants encode the whole visible graph (two layers, hidden 64)
from the same text-derived node features the main model uses, then score an
ordered pair through a logistic head on the concatenated endpoint
embeddings. Aggregation ignores edge direction; direction is learned by the
ordered head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Edge, SupplyGraph, sample_negatives
from .optim import MomentumSGD
from .rng import make_rng, mix_seed

LEAKY_SLOPE = 0.2


@dataclass
class GnnTrainConfig:
    epochs: int = 200
    lr: float = 0.05
    momentum: float = 0.9
    grad_clip: float = 5.0
    hidden: int = 64
    seed: int = 0


class GnnLinkModel:
    """kind 'SAGE' (mean aggregation) or 'GAT' (single-head additive attention)."""

    def __init__(self, kind: str, in_dim: int, hidden: int, seed: int):
        if kind not in ("SAGE", "GAT"):
            raise ValueError(f"unknown GNN kind {kind!r}")
        self.kind = kind
        self.hidden = hidden
        rng = make_rng(seed, "gnn_baseline", kind)

        def lin(a, b):
            return (rng.random((a, b)) * 2 - 1) / np.sqrt(a)

        if kind == "SAGE":
            self.params = {
                "w_self1": lin(in_dim, hidden), "w_nbr1": lin(in_dim, hidden),
                "w_self2": lin(hidden, hidden), "w_nbr2": lin(hidden, hidden),
            }
        else:
            self.params = {
                "w1": lin(in_dim, hidden), "al1": lin(hidden, 1)[:, 0], "ar1": lin(hidden, 1)[:, 0],
                "w2": lin(hidden, hidden), "al2": lin(hidden, 1)[:, 0], "ar2": lin(hidden, 1)[:, 0],
            }
        self.params["head_w"] = lin(2 * hidden, 1)[:, 0]
        self.params["head_b"] = np.zeros(1)

    # -- forward ------------------------------------------------------------

    def node_embeddings(self, x: np.ndarray, adj) -> np.ndarray:
        h, _ = self._forward(x, adj)
        return h

    def _forward(self, x: np.ndarray, adj):
        if self.kind == "SAGE":
            mean_mat = adj
            mx = mean_mat @ x
            a1 = x @ self.params["w_self1"] + mx @ self.params["w_nbr1"]
            h1 = np.tanh(a1)
            mh = mean_mat @ h1
            a2 = h1 @ self.params["w_self2"] + mh @ self.params["w_nbr2"]
            h2 = np.tanh(a2)
            return h2, (x, mx, h1, mh, h2)
        src, dst, seg = adj
        z1, att1 = _gat_layer(x, self.params["w1"], self.params["al1"], self.params["ar1"],
                              src, dst, seg)
        z2, att2 = _gat_layer(z1[0], self.params["w2"], self.params["al2"], self.params["ar2"],
                              src, dst, seg)
        return z2[0], (x, z1, att1, z2, att2)

    def pair_logits(self, h: np.ndarray, pairs: list[Edge], index: dict[int, int]) -> np.ndarray:
        ia = np.array([index[a] for a, _ in pairs])
        ib = np.array([index[b] for _, b in pairs])
        feats = np.concatenate([h[ia], h[ib]], axis=1)
        return feats @ self.params["head_w"] + self.params["head_b"][0]


def _segments(src_sorted: np.ndarray) -> np.ndarray:
    """Start offsets of each contiguous src run (src must be sorted)."""
    return np.flatnonzero(np.r_[True, src_sorted[1:] != src_sorted[:-1]])


def _gat_layer(x, w, al, ar, src, dst, seg):
    """Single-head additive attention over (src <- dst) edge list.

    Edge list includes self-loops and both directions; src is sorted so
    per-node softmax uses reduceat segments.
    """
    z = x @ w
    score_l = z @ al
    score_r = z @ ar
    pre = score_l[src] + score_r[dst]
    e = np.where(pre > 0, pre, LEAKY_SLOPE * pre)
    emax = np.maximum.reduceat(e, seg)
    e_shift = e - np.repeat(emax, np.diff(np.r_[seg, len(e)]))
    ex = np.exp(e_shift)
    denom = np.add.reduceat(ex, seg)
    alpha = ex / np.repeat(denom, np.diff(np.r_[seg, len(e)]))
    agg = np.zeros_like(z)
    np.add.at(agg, src, alpha[:, None] * z[dst])
    h = np.tanh(agg)
    return (h, z, agg), (pre, alpha)


def _gat_layer_backward(dh, layer_cache, att_cache, x, w, al, ar, src, dst, seg, grads, wkey, alkey, arkey):
    h, z, agg = layer_cache
    pre, alpha = att_cache
    dagg = dh * (1.0 - h * h)
    dalpha = (dagg[src] * z[dst]).sum(axis=1)
    dz = np.zeros_like(z)
    np.add.at(dz, dst, alpha[:, None] * dagg[src])
    # softmax over each src segment
    seg_sizes = np.diff(np.r_[seg, len(alpha)])
    inner = np.add.reduceat(alpha * dalpha, seg)
    de = alpha * (dalpha - np.repeat(inner, seg_sizes))
    dpre = de * np.where(pre > 0, 1.0, LEAKY_SLOPE)
    dscore_l = np.zeros(len(z))
    np.add.at(dscore_l, src, dpre)
    dscore_r = np.zeros(len(z))
    np.add.at(dscore_r, dst, dpre)
    grads[alkey] += z.T @ dscore_l
    grads[arkey] += z.T @ dscore_r
    dz += np.outer(dscore_l, al) + np.outer(dscore_r, ar)
    grads[wkey] += x.T @ dz
    return dz @ w.T


def _mean_adjacency(n: int, index: dict[int, int], edges: frozenset[Edge]) -> np.ndarray:
    m = np.zeros((n, n))
    for a, b in edges:
        m[index[a], index[b]] = 1.0
        m[index[b], index[a]] = 1.0
    deg = m.sum(axis=1, keepdims=True)
    np.divide(m, deg, out=m, where=deg > 0)
    return m


def _edge_list(n: int, index: dict[int, int], edges: frozenset[Edge]):
    pairs = {(i, i) for i in range(n)}
    for a, b in edges:
        ia, ib = index[a], index[b]
        pairs.add((ia, ib))
        pairs.add((ib, ia))
    arr = np.array(sorted(pairs), dtype=np.int64)
    src, dst = arr[:, 0], arr[:, 1]
    return src, dst, _segments(src)


def train_link_model(
    kind: str,
    graph: SupplyGraph,
    features: dict[int, np.ndarray],
    train_edges: frozenset[Edge],
    split,
    cfg: GnnTrainConfig,
) -> "TrainedLinkModel":
    """Logistic link prediction on train edges plus per-epoch seeded negatives."""
    ids = graph.ids
    index = {fid: i for i, fid in enumerate(ids)}
    x = np.stack([features[fid] for fid in ids])
    model = GnnLinkModel(kind, x.shape[1], cfg.hidden, cfg.seed)
    adj = (
        _mean_adjacency(len(ids), index, train_edges)
        if kind == "SAGE"
        else _edge_list(len(ids), index, train_edges)
    )
    positives = sorted(train_edges)
    opt = MomentumSGD(model.params, lr=cfg.lr, momentum=cfg.momentum, grad_clip=cfg.grad_clip)
    for epoch in range(cfg.epochs):
        negatives = sample_negatives(
            graph, positives, "train", mix_seed(cfg.seed, "gnn_neg", epoch), split
        )
        pairs = list(positives) + list(negatives)
        y = np.r_[np.ones(len(positives)), np.zeros(len(negatives))]
        loss, grads = _link_step(model, x, adj, pairs, y, index)
        opt.step(model.params, grads)
    return TrainedLinkModel(model, x, adj, index)


def _link_step(model: GnnLinkModel, x, adj, pairs, y, index):
    h, cache = model._forward(x, adj)
    ia = np.array([index[a] for a, _ in pairs])
    ib = np.array([index[b] for _, b in pairs])
    feats = np.concatenate([h[ia], h[ib]], axis=1)
    logits = feats @ model.params["head_w"] + model.params["head_b"][0]
    p = 1.0 / (1.0 + np.exp(-logits))
    n = len(pairs)
    loss = float(-(y * np.log(p + 1e-12) + (1 - y) * np.log(1 - p + 1e-12)).mean())
    dlogits = (p - y) / n
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    grads["head_w"] = feats.T @ dlogits
    grads["head_b"] = np.array([dlogits.sum()])
    dfeats = np.outer(dlogits, model.params["head_w"])
    dh = np.zeros_like(h)
    hid = model.hidden
    np.add.at(dh, ia, dfeats[:, :hid])
    np.add.at(dh, ib, dfeats[:, hid:])

    if model.kind == "SAGE":
        xin, mx, h1, mh, h2 = cache
        da2 = dh * (1.0 - h2 * h2)
        grads["w_self2"] += h1.T @ da2
        grads["w_nbr2"] += mh.T @ da2
        dh1 = da2 @ model.params["w_self2"].T + adj.T @ (da2 @ model.params["w_nbr2"].T)
        da1 = dh1 * (1.0 - h1 * h1)
        grads["w_self1"] += xin.T @ da1
        grads["w_nbr1"] += mx.T @ da1
    else:
        src, dst, seg = adj
        xin, z1, att1, z2, att2 = cache
        dh1 = _gat_layer_backward(dh, z2, att2, z1[0], model.params["w2"],
                                  model.params["al2"], model.params["ar2"],
                                  src, dst, seg, grads, "w2", "al2", "ar2")
        _gat_layer_backward(dh1, z1, att1, xin, model.params["w1"],
                            model.params["al1"], model.params["ar1"],
                            src, dst, seg, grads, "w1", "al1", "ar1")
    return loss, grads


@dataclass
class TrainedLinkModel:
    model: GnnLinkModel
    x: np.ndarray
    adj: object
    index: dict[int, int]

    def predict(self, pairs: list[Edge]) -> list[bool]:
        """Threshold the logistic output at 0.5 (logit 0)."""
        h = self.model.node_embeddings(self.x, self.adj)
        logits = self.model.pair_logits(h, pairs, self.index)
        return [bool(v > 0) for v in logits]

    def scores(self, pairs: list[Edge]) -> np.ndarray:
        h = self.model.node_embeddings(self.x, self.adj)
        return 1.0 / (1.0 + np.exp(-self.model.pair_logits(h, pairs, self.index)))
