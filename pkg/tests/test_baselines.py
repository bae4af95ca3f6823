import numpy as np
import pytest

from firmrel.baselines import (GnnLinkModel, GnnTrainConfig, _edge_list, _gat_layer,
                               _link_step, _mean_adjacency, train_link_model)
from firmrel.data import build_eval_split
from firmrel.synth import WorldConfig, generate_world
from firmrel.text_encoder import TextEncoder, feature_matrix


@pytest.fixture(scope="module")
def setup():
    cfg = WorldConfig(n_firms=60, n_industries=4, mean_out_degree=3.0, seed=31)
    graph, _ = generate_world(cfg)
    split = build_eval_split(graph, 0.15, seed=7)
    enc = TextEncoder(dim=24, seed=2)
    feats = feature_matrix(graph, enc)
    return graph, split, feats


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        GnnLinkModel("GCN", 8, 4, seed=0)


def test_training_deterministic(setup):
    graph, split, feats = setup
    cfg = GnnTrainConfig(epochs=10, hidden=8, seed=3)
    m1 = train_link_model("SAGE", graph, feats, split.train_edges, split, cfg)
    m2 = train_link_model("SAGE", graph, feats, split.train_edges, split, cfg)
    pairs = [p[:2] for p in split.inductive_pairs[:20]]
    assert np.array_equal(m1.scores(pairs), m2.scores(pairs))


def test_zero_epochs_still_scores(setup):
    graph, split, feats = setup
    cfg = GnnTrainConfig(epochs=0, hidden=8, seed=3)
    m = train_link_model("GAT", graph, feats, split.train_edges, split, cfg)
    pairs = [p[:2] for p in split.inductive_pairs[:10]]
    preds = m.predict(pairs)
    assert len(preds) == 10
    assert all(isinstance(p, bool) for p in preds)


def test_direction_sensitivity(setup):
    graph, split, feats = setup
    cfg = GnnTrainConfig(epochs=40, hidden=8, seed=3)
    m = train_link_model("SAGE", graph, feats, split.train_edges, split, cfg)
    pos = sorted(split.train_edges)
    fwd = m.scores(pos[:30])
    rev = m.scores([(b, a) for a, b in pos[:30]])
    assert np.max(np.abs(fwd - rev)) > 1e-6


@pytest.mark.parametrize("kind", ["SAGE", "GAT"])
def test_gradients_match_finite_differences(kind, setup):
    graph, split, feats = setup
    ids = graph.ids[:12]
    sub_edges = frozenset((a, b) for a, b in split.train_edges if a in ids[:12] and b in ids[:12])
    index = {fid: i for i, fid in enumerate(ids)}
    x = np.stack([feats[f] for f in ids])
    model = GnnLinkModel(kind, x.shape[1], 5, seed=1)
    adj = (_mean_adjacency(len(ids), index, sub_edges) if kind == "SAGE"
           else _edge_list(len(ids), index, sub_edges))
    pairs = [(ids[0], ids[1]), (ids[2], ids[3]), (ids[4], ids[5])]
    y = np.array([1.0, 0.0, 1.0])

    loss, grads = _link_step(model, x, adj, pairs, y, index)
    rng = np.random.default_rng(0)
    eps = 1e-6
    for key in sorted(model.params):
        arr = model.params[key]
        flat = arr.ravel()
        for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + eps
            up, _ = _link_step(model, x, adj, pairs, y, index)
            flat[i] = old - eps
            down, _ = _link_step(model, x, adj, pairs, y, index)
            flat[i] = old
            num = (up - down) / (2 * eps)
            ana = grads[key].ravel()[i]
            assert abs(num - ana) <= 1e-7 + 1e-4 * max(abs(num), abs(ana)), key


def test_gat_attention_rows_normalized(setup):
    graph, split, feats = setup
    ids = graph.ids
    index = {fid: i for i, fid in enumerate(ids)}
    x = np.stack([feats[f] for f in ids])
    model = GnnLinkModel("GAT", x.shape[1], 6, seed=2)
    src, dst, seg = _edge_list(len(ids), index, split.train_edges)
    (_, _, _), (pre, alpha) = _gat_layer(
        x, model.params["w1"], model.params["al1"], model.params["ar1"], src, dst, seg
    )
    sums = np.add.reduceat(alpha, seg)
    assert np.allclose(sums, 1.0, atol=1e-9)
