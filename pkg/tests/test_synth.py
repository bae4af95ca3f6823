import numpy as np
import pytest

from firmrel.data import save_world
from firmrel.synth import (WorldConfig, WorldConfigError, default_compat, describe,
                           generate_world, industry_names)


def test_edge_count_matches_degree_target():
    cfg = WorldConfig(n_firms=300, n_industries=10, mean_out_degree=3.6, seed=7)
    g, _ = generate_world(cfg)
    expected = round(300 * 3.6)
    # expected-count oracle: the sampler draws exactly sum-of-probability edges
    assert abs(g.num_edges - expected) <= 0.1 * expected
    assert g.num_edges == expected


def test_zero_compat_means_zero_edges():
    cfg = WorldConfig(n_firms=20, n_industries=2, mean_out_degree=0.5,
                      compat=np.zeros((2, 2)), seed=1)
    g, _ = generate_world(cfg)
    assert g.num_edges == 0


def test_zero_competitor_rate():
    cfg = WorldConfig(n_firms=30, n_industries=3, competitor_within_industry_rate=0.0, seed=2)
    _, comp = generate_world(cfg)
    assert comp == frozenset()


def test_competitors_are_same_industry():
    cfg = WorldConfig(n_firms=60, n_industries=4, competitor_within_industry_rate=0.7, seed=3)
    g, comp = generate_world(cfg)
    assert comp
    for a, b in comp:
        assert g.companies[a].sic_label == g.companies[b].sic_label
        assert a < b


def test_infeasible_degree_target():
    # only 2x2x... same-industry pairs have propensity; ask for too many edges
    compat = np.eye(2) * 0.5
    with pytest.raises(WorldConfigError):
        cfg = WorldConfig(n_firms=10, n_industries=2, mean_out_degree=9.0,
                          compat=compat, seed=0)
        generate_world(cfg)


def test_config_validation():
    with pytest.raises(WorldConfigError):
        WorldConfig(n_firms=1)
    with pytest.raises(WorldConfigError):
        WorldConfig(n_firms=10, mean_out_degree=10.0)
    with pytest.raises(WorldConfigError):
        WorldConfig(compat=np.full((10, 10), 1.5))
    with pytest.raises(WorldConfigError):
        WorldConfig(desc_template_tokens=4, desc_salt_tokens=4)


# ---------------------------------------------------------------------------
# descriptions

def test_description_overlap_same_industry():
    cfg = WorldConfig(n_firms=40, n_industries=2, seed=5)
    g, _ = generate_world(cfg)
    by_ind = {}
    for c in g.companies.values():
        by_ind.setdefault(c.sic_label, []).append(c)
    for group in by_ind.values():
        a, b = group[0], group[1]
        overlap = len(set(a.description) & set(b.description))
        assert overlap / len(a.description) >= 0.6


def test_description_overlap_cross_industry():
    cfg = WorldConfig(n_firms=40, n_industries=2, seed=5)
    g, _ = generate_world(cfg)
    labels = g.sic_labels()
    a = next(c for c in g.companies.values() if c.sic_label == labels[0])
    b = next(c for c in g.companies.values() if c.sic_label == labels[1])
    overlap = len(set(a.description) & set(b.description))
    assert overlap / len(a.description) < 0.4


def test_describe_is_stable():
    cfg = WorldConfig(n_firms=20, n_industries=2, seed=9)
    g, _ = generate_world(cfg)
    c = g.companies[7]
    assert describe(c, cfg) == c.description
    assert describe(c, cfg) == describe(c, cfg)
    assert len(c.description) == cfg.desc_template_tokens


def test_every_industry_label_appears():
    cfg = WorldConfig(n_firms=50, n_industries=10, seed=11)
    g, _ = generate_world(cfg)
    assert len(g.sic_labels()) == 10
    assert len(industry_names(10, 11)) == len(set(industry_names(10, 11))) == 10


# ---------------------------------------------------------------------------
# planted structure and reproducibility

def _ranks(x):
    # average ranks for ties
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0
        i = j + 1
    return ranks


def _spearman(x, y):
    rx = _ranks(np.asarray(x, dtype=float))
    ry = _ranks(np.asarray(y, dtype=float))
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx * ry).sum() / np.sqrt((rx * rx).sum() * (ry * ry).sum()))


def test_planted_signal_monotone_in_compat():
    # distinct propensities so rank correlation is well defined (ties cap
    # tie-aware Spearman below the threshold no matter how clean the signal)
    k = 5
    rng = np.random.default_rng(99)
    vals = np.linspace(0.04, 0.9, k * k)
    rng.shuffle(vals)
    compat = vals.reshape(k, k)
    cfg = WorldConfig(n_firms=300, n_industries=k, mean_out_degree=6.0, compat=compat, seed=13)
    g, _ = generate_world(cfg)
    names = industry_names(cfg.n_industries, cfg.seed)
    ind_of = {cid: names.index(c.sic_label) for cid, c in g.companies.items()}
    counts = np.zeros((k, k))
    pop = np.zeros(k)
    for cid in g.ids:
        pop[ind_of[cid]] += 1
    for a, b in g.edges:
        counts[ind_of[a], ind_of[b]] += 1
    pair_counts = np.outer(pop, pop) - np.diag(pop)
    freq = counts / pair_counts
    rho = _spearman(compat.ravel(), freq.ravel())
    assert rho > 0.9


def test_world_file_bytes_reproducible(tmp_path):
    cfg = WorldConfig(n_firms=80, n_industries=4, seed=21)
    for name in ("a.txt", "b.txt"):
        g, comp = generate_world(WorldConfig(n_firms=80, n_industries=4, seed=21))
        save_world(g, comp, tmp_path / name)
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_default_compat_shape():
    m = default_compat(6)
    assert m.shape == (6, 6)
    assert np.all(np.diag(m) == 0.85)
    assert m.min() >= 0 and m.max() <= 1
