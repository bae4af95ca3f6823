import numpy as np
import pytest

from firmrel import templates
from firmrel.data import EdgeView, build_eval_split, ego_subgraph
from firmrel.graph_encoder import GraphEncoder
from firmrel.lm import EOS, GSLOT, Vocab
from firmrel.pipeline import vocab_for_world
from firmrel.projector import init_projector
from firmrel.synth import WorldConfig, generate_world
from firmrel.tasks import (BuildContext, SkipInstance, TaskInstance, build_cgm, build_comp,
                           build_ic, build_srp, build_text_pair, load_instances,
                           mixed_prompt, prepare, render_with_markers, save_instances)
from firmrel.text_encoder import TextEncoder, feature_matrix


@pytest.fixture(scope="module")
def world():
    cfg = WorldConfig(n_firms=60, n_industries=4, mean_out_degree=3.0, seed=7)
    graph, comp = generate_world(cfg)
    split = build_eval_split(graph, 0.1, seed=11)
    vocab = vocab_for_world(graph)
    ctx = BuildContext(graph=graph, vocab=vocab, visible=EdgeView(split.train_edges),
                       neighbor_cap=32, seed=5)
    enc = TextEncoder(dim=128, seed=3)
    feats = feature_matrix(graph, enc)
    return graph, comp, split, vocab, ctx, feats


def firm_with_degree(ctx, split, lo=2):
    for f in sorted(split.train_firms):
        nbrs = ctx.visible.neighbors(f)
        if len(nbrs) >= lo:
            return f
    raise AssertionError("no firm with enough neighbors")


# ---------------------------------------------------------------------------
# CGM

def test_cgm_target_is_member_order(world):
    graph, _, split, vocab, ctx, _ = world
    f = firm_with_degree(ctx, split)
    inst = build_cgm(ctx, f)
    sub = ego_subgraph(graph, f, ctx.visible, cap=32, seed=5)
    names = [graph.companies[m].name for m in sub.members]
    want = tuple(vocab.encode_word(w) for w in f" | ".join(names).split()) + (EOS,)
    assert inst.target == want
    assert inst.slot_count() == len(sub.members)


def test_cgm_shuffle_deterministic_but_target_stable(world):
    graph, _, split, vocab, ctx, _ = world
    f = firm_with_degree(ctx, split)
    a = build_cgm(ctx, f)
    b = build_cgm(ctx, f)
    assert a.tokens == b.tokens
    assert a.target == b.target
    import dataclasses

    ctx2 = dataclasses.replace(ctx, seed=99)
    c = build_cgm(ctx2, f)
    assert c.target == a.target  # member order does not depend on the shuffle
    assert c.tokens != a.tokens  # but the prompt's name list does


def test_cgm_singleton_skips(world):
    graph, _, split, _, ctx, _ = world
    iso = next(f for f in sorted(split.test_firms) if not ctx.visible.neighbors(f))
    with pytest.raises(SkipInstance):
        build_cgm(ctx, iso)


def test_cgm_slot_count_tracks_members(world):
    graph, _, split, vocab, ctx, _ = world
    f = firm_with_degree(ctx, split, lo=1)
    inst = build_cgm(ctx, f)
    sub = ego_subgraph(graph, f, ctx.visible, cap=32, seed=5)
    assert inst.slot_count() == len(sub.members) >= 2


# ---------------------------------------------------------------------------
# IC

def test_ic_target_is_sic_tokens(world):
    graph, _, split, vocab, ctx, _ = world
    f = sorted(split.train_firms)[0]
    inst = build_ic(ctx, f)
    want = tuple(vocab.encode_word(w) for w in graph.companies[f].sic_label.split()) + (EOS,)
    assert inst.target == want


def test_ic_same_industry_same_target(world):
    graph, _, split, _, ctx, _ = world
    by_label = {}
    for f in sorted(split.train_firms):
        by_label.setdefault(graph.companies[f].sic_label, []).append(f)
    group = next(g for g in by_label.values() if len(g) >= 2)
    a, b = build_ic(ctx, group[0]), build_ic(ctx, group[1])
    assert a.target == b.target


def test_ic_isolated_firm_single_slot(world):
    graph, _, split, _, ctx, _ = world
    iso = next(f for f in sorted(split.test_firms) if not ctx.visible.neighbors(f))
    inst = build_ic(ctx, iso)
    assert inst.slot_count() == 1


# ---------------------------------------------------------------------------
# SRP / COMP

def test_srp_direction_and_labels(world):
    graph, _, split, vocab, ctx, _ = world
    a, b = sorted(split.train_edges)[0]
    yes_inst = build_srp(ctx, a, b, label=True)
    assert yes_inst.target == (vocab.encode_word("yes"), EOS)
    rev = build_srp(ctx, b, a, label=(b, a) in graph.edges)
    if (b, a) not in graph.edges:
        assert rev.target == (vocab.encode_word("no"), EOS)
    assert rev.tokens != yes_inst.tokens  # order of firms changes the prompt


def test_srp_excludes_other_endpoint(world):
    graph, _, split, _, ctx, _ = world
    a, b = sorted(split.train_edges)[0]
    inst = build_srp(ctx, a, b, label=True)
    for start, sub in inst.slots:
        assert b not in sub.members or sub.center == b
        assert a not in sub.members or sub.center == a


def test_srp_with_sic_differs_only_in_industry_clauses(world):
    graph, _, split, vocab, ctx, _ = world
    a, b = sorted(split.train_edges)[0]
    plain = build_srp(ctx, a, b, label=True, with_sic=False)
    sic = build_srp(ctx, a, b, label=True, with_sic=True)
    words_plain = render_with_markers(plain, vocab).split()
    words_sic = render_with_markers(sic, vocab).split()
    extra = []
    i = j = 0
    while j < len(words_sic):
        if i < len(words_plain) and words_plain[i] == words_sic[j]:
            i += 1
            j += 1
        else:
            extra.append(words_sic[j])
            j += 1
    assert i == len(words_plain)
    assert extra[0] == "Industry:"
    labels = " ".join(extra)
    assert graph.companies[a].sic_label in labels
    assert graph.companies[b].sic_label in labels


def test_same_firm_pair_rejected(world):
    _, _, _, _, ctx, _ = world
    with pytest.raises(ValueError):
        build_srp(ctx, 3, 3, label=False)
    with pytest.raises(ValueError):
        build_comp(ctx, 3, 3)


def test_comp_has_no_target_and_carries_label(world):
    graph, comp, _, _, ctx, _ = world
    pair = sorted(comp)[0]
    inst = build_comp(ctx, pair[0], pair[1], label=True)
    assert inst.target == ()
    assert inst.label is True


def test_srp_comp_prompts_share_prefix(world):
    graph, _, split, vocab, ctx, _ = world
    a, b = sorted(split.train_edges)[0]
    srp = build_srp(ctx, a, b, label=True)
    comp = build_comp(ctx, a, b)
    # identical until the question clause
    n = 0
    while n < min(len(srp.tokens), len(comp.tokens)) and srp.tokens[n] == comp.tokens[n]:
        n += 1
    srp_q = vocab.decode(srp.tokens[n : n + 3])
    prefix_words = render_with_markers(srp, vocab).split()
    q_start = templates.SRP_QUESTION.split()[0]
    assert srp.tokens[:n] == comp.tokens[:n]
    assert n > 50  # the shared prefix covers both subgraphs and descriptions
    assert vocab.tokens[srp.tokens[n]] in templates.SRP_QUESTION.split()
    assert vocab.tokens[comp.tokens[n]] in templates.COMP_QUESTION.split()


# ---------------------------------------------------------------------------
# template fidelity + slot law

def test_template_fidelity_byte_for_byte(world):
    graph, _, split, vocab, ctx, _ = world
    a, b = sorted(split.train_edges)[0]
    inst = build_srp(ctx, a, b, label=True)
    from firmrel.tasks import desc_text

    want = templates.SRP.format(
        company1_description=desc_text(graph, a),
        company1_name=graph.companies[a].name,
        company2_description=desc_text(graph, b),
        company2_name=graph.companies[b].name,
    )
    assert render_with_markers(inst, vocab) == want

    f = firm_with_degree(ctx, split)
    ic = build_ic(ctx, f)
    want_ic = templates.IC.format(
        company_description=desc_text(graph, f),
        company_name=graph.companies[f].name,
    )
    assert render_with_markers(ic, vocab) == want_ic


def test_slot_count_law(world):
    graph, _, split, _, ctx, _ = world
    a, b = sorted(split.train_edges)[0]
    for inst in (build_srp(ctx, a, b, label=True), build_ic(ctx, a),
                 build_comp(ctx, a, b)):
        assert inst.slot_count() == sum(len(sub.members) for _, sub in inst.slots)


def test_no_unknown_words_in_prompts(world):
    graph, _, split, vocab, ctx, _ = world
    a, b = sorted(split.train_edges)[0]
    inst = build_srp(ctx, a, b, label=True, with_sic=True)
    fallback = {vocab.index[f"<unk{i}>"] for i in range(16)}
    assert not (set(inst.tokens) & fallback)


# ---------------------------------------------------------------------------
# graph-blind prompts

def test_text_pair_has_no_slots_and_renders_connections(world):
    graph, _, split, vocab, ctx, _ = world
    a, b = sorted(split.train_edges)[0]
    inst = build_text_pair(ctx, "SRP", a, b)
    assert inst.slot_count() == 0
    assert inst.slots == ()
    iso = next(f for f in sorted(split.test_firms) if not ctx.visible.neighbors(f))
    other = sorted(split.train_firms)[0]
    inst2 = build_text_pair(ctx, "SRP", iso, other)
    none_id = vocab.encode_word("none")
    assert none_id in inst2.tokens


# ---------------------------------------------------------------------------
# serialization

def test_instance_file_roundtrip(world, tmp_path):
    graph, comp, split, vocab, ctx, _ = world
    a, b = sorted(split.train_edges)[0]
    f = firm_with_degree(ctx, split)
    instances = [
        build_cgm(ctx, f),
        build_ic(ctx, f),
        build_srp(ctx, a, b, label=True, with_sic=True),
        build_comp(ctx, a, b, label=False),
    ]
    path = tmp_path / "inst.txt"
    save_instances(instances, path)
    loaded = load_instances(path, ctx)
    assert len(loaded) == len(instances)
    for orig, back in zip(instances, loaded):
        assert orig.tokens == back.tokens
        assert orig.target == back.target
        assert orig.with_sic == back.with_sic
        assert orig.label == back.label


# ---------------------------------------------------------------------------
# materialization

def test_prepare_and_mixed_prompt_wiring(world):
    graph, _, split, vocab, ctx, feats = world
    a, b = sorted(split.train_edges)[0]
    inst = build_srp(ctx, a, b, label=True)
    genc = GraphEncoder(in_dim=128, hidden=16, seed=1)
    prep = prepare(inst, genc, feats)
    assert prep.node_embeddings.shape == (inst.slot_count(), 16)
    proj = init_projector(16, 24, seed=2)
    mixed = mixed_prompt(prep, proj)
    assert len(mixed.injected) == inst.slot_count()
    for pos, vec in mixed.injected:
        assert mixed.tokens[pos] == GSLOT
        assert vec.shape == (24,)


def test_target_rejects_gslot():
    with pytest.raises(ValueError):
        TaskInstance("SRP", (GSLOT,), (), (GSLOT,), False, None, (0, 1))
