"""End-to-end orchestration: world -> pretraining -> stages -> evaluation.

Every step is a pure function of (inputs, config); artifacts written twice
from the same config are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import templates
from .baselines import GnnTrainConfig, train_link_model
from .config import DEFAULTS
from .data import (EdgeView, SupplyGraph, SplitSpec, build_eval_split, ego_subgraph,
                   sample_negatives, save_split, save_world)
from .evalkit import EvalReport, competitor_eval_pairs, run_matrix, write_report
from .graph_encoder import ContrastiveConfig, GraphEncoder, pretrain_contrastive
from .lm import EOS, LMConfig, LMPretrainConfig, Vocab, build_vocab, generate, lm_pretrain
from .projector import init_projector
from .rng import make_rng, mix_seed
from .synth import WorldConfig, generate_world
from .tasks import (BuildContext, SkipInstance, TaskInstance, build_cgm, build_ic,
                    build_srp, mixed_prompt, prepare, save_instances)
from .text_encoder import TextEncoder, feature_matrix
from .trainer import ModelBundle, TrainConfig, save_bundle, stage1_train, stage2_train

Config = dict[str, int | float | str]


def world_config(cfg: Config) -> WorldConfig:
    return WorldConfig(
        n_firms=int(cfg["world.n_firms"]),
        n_industries=int(cfg["world.n_industries"]),
        mean_out_degree=float(cfg["world.mean_out_degree"]),
        competitor_within_industry_rate=float(cfg["world.competitor_rate"]),
        desc_template_tokens=int(cfg["world.desc_tokens"]),
        desc_salt_tokens=int(cfg["world.salt_tokens"]),
        seed=int(cfg["world.seed"]),
    )


N_MARKERS = 16


def marker_words() -> list[str]:
    return [f"g{i}" for i in range(N_MARKERS)]


def vocab_for_world(graph: SupplyGraph) -> Vocab:
    desc_words = sorted({f"w{t}" for c in graph.companies.values() for t in c.description})
    names = [graph.companies[i].name for i in graph.ids]
    return build_vocab(desc_words, names, list(graph.sic_labels()),
                       templates.template_words(), marker_words())


def _marker_run(rng, identity: int, k: int) -> list[str]:
    """First token is the identity marker; the tail repeats it with light noise."""
    run = [f"g{identity}"]
    for _ in range(k - 1):
        m = identity if rng.random() < 0.7 else int(rng.integers(N_MARKERS))
        run.append(f"g{m}")
    return run


def _relational_qa_lines(
    graph: SupplyGraph, split: SplitSpec, vocab: Vocab, rng, count: int
) -> list[list[int]]:
    """Task-format lines teaching a content-free pairwise rule.

    The graph-slot runs hold abstract marker tokens (the first token carries
    the group identity, mirroring center-then-neighbors); the answer is yes
    iff the two identities are equal or successive mod the marker count.
    Firm/industry identities and true edges never appear in these answers,
    so relational competence is planted without leaking any world-specific
    relation. Filler fields are short random description tokens and names.
    """
    train = sorted(split.train_firms)
    desc_pool = sorted({t for c in graph.companies.values() for t in c.description})
    lines = []
    for i in range(count):
        m1 = int(rng.integers(N_MARKERS))
        if i % 4 < 2:  # positives: half same, half successor
            m2 = m1 if i % 2 == 0 else (m1 + 1) % N_MARKERS
            ans = "yes"
        else:
            off = int(rng.integers(2, N_MARKERS))
            m2 = (m1 + off) % N_MARKERS
            ans = "no"
        k1, k2 = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        run1 = _marker_run(rng, m1, k1)
        run2 = _marker_run(rng, m2, k2)
        fa = graph.companies[train[int(rng.integers(len(train)))]]
        fb = graph.companies[train[int(rng.integers(len(train)))]]

        def filler_desc():
            n = int(rng.integers(3, 7))
            return " ".join(f"w{desc_pool[int(rng.integers(len(desc_pool)))]}" for _ in range(n))

        template = templates.SRP if i % 3 else templates.COMP
        with_sic = i % 5 == 0
        if with_sic:
            template = template.replace(
                "{company1_description}", "{company1_description} Industry: {sic1}"
            ).replace("{company2_description}", "{company2_description} Industry: {sic2}")
        text = template.replace("<graph1>", " ".join(run1)).replace("<graph2>", " ".join(run2))
        text = text.format(
            company1_description=filler_desc(),
            company1_name=fa.name,
            company2_description=filler_desc(),
            company2_name=fb.name,
            sic1=fa.sic_label, sic2=fb.sic_label,
        )
        lines.append(vocab.encode_text(f"{text} {ans}"))
    return lines


def lm_corpus(graph: SupplyGraph, split: SplitSpec, vocab: Vocab, seed: int,
              relational_lines: int = 480) -> tuple[list[list[int]], list[list[int]]]:
    """Pretraining text: (general corpus, relational QA lines).

    The corpus holds firm profiles, true supply statements among train firms,
    name-list echo lines, and balanced answer-format lines. The QA lines are
    the content-free marker prompts; they join the corpus and also get an
    answer-tuning phase. True supply-relation answers never appear anywhere.
    """
    enc = vocab.encode_text
    lines: list[list[int]] = []
    train = sorted(split.train_firms)
    for f in train:
        c = graph.companies[f]
        desc = " ".join(f"w{t}" for t in c.description)
        lines.append(enc(f"Description: {desc} Company name: {c.name} Industry: {c.sic_label}"))
    for a, b in sorted(split.train_edges):
        lines.append(enc(f"{graph.companies[a].name} supplies {graph.companies[b].name}"))
    rng = make_rng(seed, "corpus")
    names = [graph.companies[f].name for f in train]
    for _ in range(max(20, len(train) // 2)):
        k = int(rng.integers(2, 6))
        chosen = [names[i] for i in rng.choice(len(names), size=k, replace=False)]
        listing = " | ".join(chosen)
        lines.append(enc(f"Here is a name list of companies: {listing} , please reorder "
                         f"the list : {listing}"))
    for i in range(40):
        ans = "yes" if i % 2 == 0 else "no"
        lines.append(enc(f'Give me a direct answer of "yes" or "no". {ans}'))
    qa = _relational_qa_lines(graph, split, vocab, rng, relational_lines)
    return lines + qa, qa


# ---------------------------------------------------------------------------
# instance assembly

def stage1_instances(
    ctx: BuildContext, split: SplitSpec, holdout_every: int = 10
) -> tuple[list[TaskInstance], list[TaskInstance]]:
    """CGM instances over train firms; every n-th eligible firm is held out."""
    train_insts: list[TaskInstance] = []
    held_insts: list[TaskInstance] = []
    eligible = 0
    for f in sorted(split.train_firms):
        try:
            inst = build_cgm(ctx, f)
        except SkipInstance:
            continue
        eligible += 1
        if holdout_every > 0 and eligible % holdout_every == 0:
            held_insts.append(inst)
        else:
            train_insts.append(inst)
    return train_insts, held_insts


def stage2_instance_sets(
    ctx: BuildContext, graph: SupplyGraph, split: SplitSpec, seed: int
) -> tuple[list[TaskInstance], list[TaskInstance]]:
    """IC per train firm; SRP from all train edges plus matched negatives.

    SIC prompt variants alternate deterministically so both evaluation
    variants are in-distribution.
    """
    ic = [build_ic(ctx, f) for f in sorted(split.train_firms)]
    positives = sorted(split.train_edges)
    negatives = sample_negatives(graph, positives, "train", mix_seed(seed, "srp_neg"), split)
    pairs = [(a, b, True) for a, b in positives] + [(a, b, False) for a, b in negatives]
    rng = make_rng(seed, "srp_order")
    order = rng.permutation(len(pairs))
    srp = [
        build_srp(ctx, *pairs[i][:2], label=pairs[i][2], with_sic=bool(j % 2))
        for j, i in enumerate(order)
    ]
    return ic, srp


# ---------------------------------------------------------------------------
# measurement helpers

def cgm_exact_accuracy(bundle: ModelBundle, features, instances: list[TaskInstance]) -> float:
    """Fraction of instances whose greedy decode reproduces the full target."""
    if not instances:
        return 0.0
    hits = 0
    for inst in instances:
        prep = prepare(inst, bundle.graph_encoder, features)
        prompt = mixed_prompt(prep, bundle.projector)
        out = generate(bundle.lm, prompt, max_tokens=len(inst.target) + 2)
        if out == inst.target[:-1]:  # target ends with EOS
            hits += 1
    return hits / len(instances)


def srp_choice_accuracy(bundle: ModelBundle, ctx: BuildContext, features,
                        instances: list[TaskInstance]) -> float:
    """Yes/no accuracy on already-built SRP instances."""
    from .evalkit import make_lm_scorer

    if not instances:
        return 0.0
    with_s = [i for i in instances if i.with_sic]
    without_s = [i for i in instances if not i.with_sic]
    hits = 0
    for group, flag in ((without_s, False), (with_s, True)):
        if not group:
            continue
        scorer = make_lm_scorer(bundle, ctx, features, "SRP", flag)
        preds = scorer([inst.firm_ids for inst in group])
        hits += sum(int(p == inst.label) for p, inst in zip(preds, group))
    return hits / len(instances)


# ---------------------------------------------------------------------------
# full pipeline

@dataclass
class PipelineResult:
    graph: SupplyGraph
    competitors: frozenset
    split: SplitSpec
    features: dict[int, np.ndarray]
    ctx: BuildContext
    bundle: ModelBundle  # stage-2 trained
    stage1_bundle: ModelBundle  # deep copy at end of stage 1
    gnn_models: dict[str, object]
    report: EvalReport
    cgm_heldout: list[TaskInstance]
    losses: dict[str, list[float]]
    paths: dict[str, Path]


def build_pretrained_bundle(
    cfg: Config, graph: SupplyGraph, split: SplitSpec, vocab: Vocab,
    features: dict[int, np.ndarray],
) -> tuple[ModelBundle, dict[str, list[float]]]:
    """Pretrain LM and graph encoder, freeze both, attach a fresh projector."""
    lm_cfg = LMConfig(
        vocab_size=len(vocab), dim=int(cfg["lm.dim"]), blocks=int(cfg["lm.blocks"]),
        heads=int(cfg["lm.heads"]), ff_dim=int(cfg["lm.ff"]), context=int(cfg["lm.context"]),
    )
    corpus, qa_lines = lm_corpus(graph, split, vocab, int(cfg["lm.seed"]),
                                 relational_lines=int(cfg["lm.relational_lines"]))
    model, lm_losses = lm_pretrain(
        corpus, lm_cfg,
        LMPretrainConfig(epochs=int(cfg["lm.epochs"]), batch_size=int(cfg["lm.batch"]),
                         lr=float(cfg["lm.lr"]), seed=int(cfg["lm.seed"]),
                         qa_epochs=int(cfg["lm.qa_epochs"]), qa_lr=float(cfg["lm.qa_lr"])),
        qa_lines=qa_lines,
    )
    model.vocab = vocab

    encoder = GraphEncoder(in_dim=int(cfg["encoder.dim"]), hidden=int(cfg["gnn.hidden"]),
                           seed=int(cfg["gnn.seed"]), dtype=np.float32)
    encoder, gnn_losses = pretrain_contrastive(
        graph, encoder, features, sorted(split.train_firms), split.train_edges,
        ContrastiveConfig(epochs=int(cfg["gnn.epochs"]), batch_size=int(cfg["gnn.batch"]),
                          lr=float(cfg["gnn.lr"]), temperature=float(cfg["gnn.temperature"]),
                          neighbor_cap=int(cfg["task.neighbor_cap"]), seed=int(cfg["gnn.seed"])),
    )
    proj = init_projector(int(cfg["gnn.hidden"]), int(cfg["lm.dim"]), seed=int(cfg["train.seed"]))
    text_enc = TextEncoder(dim=int(cfg["encoder.dim"]), seed=int(cfg["encoder.seed"]))
    bundle = ModelBundle(
        text_encoder=text_enc, graph_encoder=encoder, projector=proj, lm=model,
        vocab=vocab, neighbor_cap=int(cfg["task.neighbor_cap"]),
    )
    return bundle, {"lm_pretrain": lm_losses, "contrastive": gnn_losses}


def clone_bundle(bundle: ModelBundle) -> ModelBundle:
    """Deep copy sharing nothing mutable; frozen blocks stay frozen."""
    from .projector import Projector

    gnn = GraphEncoder.__new__(GraphEncoder)
    gnn.in_dim = bundle.graph_encoder.in_dim
    gnn.hidden = bundle.graph_encoder.hidden
    gnn.params = {k: v.copy() for k, v in bundle.graph_encoder.params.items()}
    gnn.frozen = False
    if bundle.graph_encoder.frozen:
        gnn.freeze()
    model = bundle.lm.astype(bundle.lm.dtype)
    model.vocab = bundle.vocab
    return ModelBundle(
        text_encoder=TextEncoder(bundle.text_encoder.dim, bundle.text_encoder.seed),
        graph_encoder=gnn,
        projector=Projector(bundle.projector.w.copy(), bundle.projector.b.copy()),
        lm=model, vocab=bundle.vocab, neighbor_cap=bundle.neighbor_cap,
        meta=dict(bundle.meta),
    )


def run_full(cfg: Config, outdir: str | Path) -> PipelineResult:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    graph, competitors = generate_world(world_config(cfg))
    save_world(graph, competitors, outdir / "world.txt")
    split = build_eval_split(graph, float(cfg["split.test_fraction"]), int(cfg["split.seed"]))
    save_split(split, outdir / "split.txt")

    text_enc = TextEncoder(dim=int(cfg["encoder.dim"]), seed=int(cfg["encoder.seed"]))
    features = feature_matrix(graph, text_enc)
    vocab = vocab_for_world(graph)

    bundle, losses = build_pretrained_bundle(cfg, graph, split, vocab, features)
    save_bundle(bundle, outdir / "bundle_pretrained.ckpt")

    ctx = BuildContext(
        graph=graph, vocab=vocab, visible=EdgeView(split.train_edges),
        neighbor_cap=int(cfg["task.neighbor_cap"]), seed=int(cfg["task.seed"]),
    )
    cgm_train, cgm_held = stage1_instances(ctx, split, int(cfg["train.cgm_holdout"]))
    ic_insts, srp_insts = stage2_instance_sets(ctx, graph, split, int(cfg["task.seed"]))
    save_instances(cgm_train, outdir / "instances_stage1.txt")
    save_instances(ic_insts, outdir / "instances_ic.txt")
    save_instances(srp_insts, outdir / "instances_srp.txt")

    t1 = TrainConfig(
        lr=float(cfg["train.lr"]), epochs=int(cfg["train.stage1_epochs"]),
        batch_size=int(cfg["train.batch"]), momentum=float(cfg["train.momentum"]),
        grad_clip=float(cfg["train.grad_clip"]), seed=int(cfg["train.seed"]),
    )
    losses["stage1"] = stage1_train(bundle, features, cgm_train, t1)
    save_bundle(bundle, outdir / "bundle_stage1.ckpt")
    stage1_bundle = clone_bundle(bundle)

    t2 = TrainConfig(
        lr=float(cfg["train.lr"]), epochs=int(cfg["train.stage2_epochs"]),
        batch_size=int(cfg["train.batch"]), momentum=float(cfg["train.momentum"]),
        grad_clip=float(cfg["train.grad_clip"]), seed=int(cfg["train.seed"]),
        stage2_mix=(int(cfg["train.mix_ic"]), int(cfg["train.mix_srp"])),
    )
    losses["stage2"] = stage2_train(bundle, features, ic_insts, srp_insts, t2)
    save_bundle(bundle, outdir / "bundle_stage2.ckpt")

    gnn_cfg = GnnTrainConfig(epochs=int(cfg["baseline.epochs"]), lr=float(cfg["baseline.lr"]),
                             hidden=int(cfg["gnn.hidden"]), seed=int(cfg["baseline.seed"]))
    gnn_models = {
        "gat": train_link_model("GAT", graph, features, split.train_edges, split, gnn_cfg),
        "sage": train_link_model("SAGE", graph, features, split.train_edges, split, gnn_cfg),
    }

    comp_pairs = competitor_eval_pairs(
        graph, competitors, int(cfg["eval.comp_positives"]), int(cfg["eval.seed"])
    )
    report = run_matrix(
        bundle, stage1_bundle, gnn_models, graph, split, ctx, features, comp_pairs,
        seed=int(cfg["eval.seed"]),
    )
    write_report(report, outdir / "report.txt", outdir / "report.tsv")

    return PipelineResult(
        graph=graph, competitors=competitors, split=split, features=features, ctx=ctx,
        bundle=bundle, stage1_bundle=stage1_bundle, gnn_models=gnn_models, report=report,
        cgm_heldout=cgm_held, losses=losses,
        paths={
            "world": outdir / "world.txt",
            "split": outdir / "split.txt",
            "pretrained": outdir / "bundle_pretrained.ckpt",
            "stage1": outdir / "bundle_stage1.ckpt",
            "stage2": outdir / "bundle_stage2.ckpt",
            "report_txt": outdir / "report.txt",
            "report_tsv": outdir / "report.tsv",
        },
    )
