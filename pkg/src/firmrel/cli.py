"""Operator surface: one binary, subcommand per pipeline step.

Exit codes: 0 success, 1 usage error, 2 data/state/integrity error. Every
failure prints a single diagnostic line to stderr. The default config path
can come from the FIRMREL_CONFIG environment variable; ``--set key=value``
flags override config-file values, and ``--seed`` re-derives every module
seed coherently.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import evalkit, pipeline, tasks
from .checkpoint import CheckpointError
from .config import ConfigError, config_lines, load_config
from .data import (EdgeView, IntegrityError, SamplingExhaustedError, WorldParseError,
                   build_eval_split, load_split, load_world, save_split, save_world)
from .evalkit import EvalRow, competitor_eval_pairs, parse_tsv, render_table, run_matrix, \
    write_report
from .lm import EOS
from .rng import make_rng
from .synth import WorldConfigError, generate_world
from .text_encoder import TextEncoder, feature_matrix
from .trainer import StageOrderError, TrainConfig, grad_check, load_bundle, save_bundle, \
    stage1_train, stage2_train

USAGE_ERROR, DATA_ERROR = 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config_from_args(args) -> dict:
    path = args.config or os.environ.get("FIRMREL_CONFIG")
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}", USAGE_ERROR)
        overrides[key.strip()] = value.strip()
    try:
        return load_config(path, overrides=overrides, base_seed=args.seed)
    except ConfigError as e:
        raise CliError(str(e), USAGE_ERROR) from e
    except FileNotFoundError as e:
        raise CliError(f"config file not found: {path}", DATA_ERROR) from e


def _load_bundle_or_die(path: str):
    p = Path(path)
    if not p.exists():
        raise CliError(f"bundle not found: {path} (run the pretrain/stage steps first)",
                       DATA_ERROR)
    try:
        return load_bundle(p)
    except CheckpointError as e:
        raise CliError(f"bad bundle {path}: {e}", DATA_ERROR) from e


def _world_and_features(cfg, world_path):
    try:
        graph, competitors = load_world(world_path)
    except FileNotFoundError as e:
        raise CliError(f"world file not found: {world_path}", DATA_ERROR) from e
    except (WorldParseError, IntegrityError) as e:
        raise CliError(str(e), DATA_ERROR) from e
    enc = TextEncoder(dim=int(cfg["encoder.dim"]), seed=int(cfg["encoder.seed"]))
    return graph, competitors, feature_matrix(graph, enc)


def _build_ctx(cfg, graph, split):
    vocab = pipeline.vocab_for_world(graph)
    return tasks.BuildContext(
        graph=graph, vocab=vocab, visible=EdgeView(split.train_edges),
        neighbor_cap=int(cfg["task.neighbor_cap"]), seed=int(cfg["task.seed"]),
    )


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(args) -> int:
    cfg = _config_from_args(args)
    try:
        graph, competitors = generate_world(pipeline.world_config(cfg))
    except WorldConfigError as e:
        raise CliError(str(e), DATA_ERROR) from e
    save_world(graph, competitors, args.out)
    split = build_eval_split(graph, float(cfg["split.test_fraction"]), int(cfg["split.seed"]))
    save_split(split, args.out + ".split")
    print(f"wrote {args.out} ({len(graph)} firms, {graph.num_edges} edges, "
          f"{len(competitors)} competitor pairs) and {args.out}.split")
    return 0


def cmd_pretrain_lm(args) -> int:
    cfg = _config_from_args(args)
    graph, _, features = _world_and_features(cfg, args.world)
    split = load_split(args.world + ".split")
    vocab = pipeline.vocab_for_world(graph)
    bundle, losses = pipeline.build_pretrained_bundle(cfg, graph, split, vocab, features)
    save_bundle(bundle, args.out)
    print(f"wrote {args.out} (lm loss {losses['lm_pretrain'][0]:.3f} -> "
          f"{losses['lm_pretrain'][-1]:.3f}, contrastive {losses['contrastive'][-1]:.3f})")
    return 0


def cmd_pretrain_gnn(args) -> int:
    # graph-encoder pretraining happens inside pretrain-lm's bundle build; this
    # subcommand re-runs just the contrastive stage for a fresh encoder seed
    cfg = _config_from_args(args)
    graph, _, features = _world_and_features(cfg, args.world)
    split = load_split(args.world + ".split")
    bundle = _load_bundle_or_die(args.bundle)
    from .graph_encoder import ContrastiveConfig, GraphEncoder, pretrain_contrastive

    encoder = GraphEncoder(in_dim=int(cfg["encoder.dim"]), hidden=int(cfg["gnn.hidden"]),
                           seed=int(cfg["gnn.seed"]), dtype=np.float32)
    encoder, losses = pretrain_contrastive(
        graph, encoder, features, sorted(split.train_firms), split.train_edges,
        ContrastiveConfig(epochs=int(cfg["gnn.epochs"]), batch_size=int(cfg["gnn.batch"]),
                          lr=float(cfg["gnn.lr"]), temperature=float(cfg["gnn.temperature"]),
                          neighbor_cap=int(cfg["task.neighbor_cap"]), seed=int(cfg["gnn.seed"])),
    )
    bundle.graph_encoder = encoder
    save_bundle(bundle, args.out or args.bundle)
    print(f"wrote {args.out or args.bundle} (contrastive loss "
          f"{losses[0]:.3f} -> {losses[-1]:.3f})" if losses else "wrote bundle")
    return 0


def cmd_stage1(args) -> int:
    cfg = _config_from_args(args)
    graph, _, features = _world_and_features(cfg, args.world)
    split = load_split(args.world + ".split")
    bundle = _load_bundle_or_die(args.bundle)
    ctx = _build_ctx(cfg, graph, split)
    train_insts, _ = pipeline.stage1_instances(ctx, split, int(cfg["train.cgm_holdout"]))
    tc = TrainConfig(lr=float(cfg["train.lr"]), epochs=int(cfg["train.stage1_epochs"]),
                     batch_size=int(cfg["train.batch"]), momentum=float(cfg["train.momentum"]),
                     grad_clip=float(cfg["train.grad_clip"]), seed=int(cfg["train.seed"]))
    losses = stage1_train(bundle, features, train_insts, tc)
    save_bundle(bundle, args.out or args.bundle)
    print(f"wrote {args.out or args.bundle} (stage1 loss {losses[0]:.3f} -> {losses[-1]:.3f})")
    return 0


def cmd_stage2(args) -> int:
    cfg = _config_from_args(args)
    graph, _, features = _world_and_features(cfg, args.world)
    split = load_split(args.world + ".split")
    bundle = _load_bundle_or_die(args.bundle)
    ctx = _build_ctx(cfg, graph, split)
    ic_insts, srp_insts = pipeline.stage2_instance_sets(ctx, graph, split,
                                                        int(cfg["task.seed"]))
    tc = TrainConfig(lr=float(cfg["train.lr"]), epochs=int(cfg["train.stage2_epochs"]),
                     batch_size=int(cfg["train.batch"]), momentum=float(cfg["train.momentum"]),
                     grad_clip=float(cfg["train.grad_clip"]), seed=int(cfg["train.seed"]),
                     stage2_mix=(int(cfg["train.mix_ic"]), int(cfg["train.mix_srp"])))
    try:
        losses = stage2_train(bundle, features, ic_insts, srp_insts, tc)
    except StageOrderError as e:
        raise CliError(str(e), DATA_ERROR) from e
    save_bundle(bundle, args.out or args.bundle)
    print(f"wrote {args.out or args.bundle} (stage2 loss {losses[0]:.3f} -> {losses[-1]:.3f})")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    graph, competitors, features = _world_and_features(cfg, args.world)
    split = load_split(args.world + ".split")
    bundle = _load_bundle_or_die(args.bundle)
    if not bundle.stage_done("stage2_done"):
        raise CliError("bundle has not completed stage 2; run stage1 and stage2 first",
                       DATA_ERROR)
    cgm_bundle = _load_bundle_or_die(args.stage1_bundle) if args.stage1_bundle else bundle
    ctx = _build_ctx(cfg, graph, split)
    from .baselines import GnnTrainConfig, train_link_model

    gnn_cfg = GnnTrainConfig(epochs=int(cfg["baseline.epochs"]), lr=float(cfg["baseline.lr"]),
                             hidden=int(cfg["gnn.hidden"]), seed=int(cfg["baseline.seed"]))
    gnn_models = {
        "gat": train_link_model("GAT", graph, features, split.train_edges, split, gnn_cfg),
        "sage": train_link_model("SAGE", graph, features, split.train_edges, split, gnn_cfg),
    }
    comp_pairs = competitor_eval_pairs(graph, competitors, int(cfg["eval.comp_positives"]),
                                       int(cfg["eval.seed"]))
    try:
        report = run_matrix(bundle, cgm_bundle, gnn_models, graph, split, ctx, features,
                            comp_pairs, seed=int(cfg["eval.seed"]))
    except StageOrderError as e:
        raise CliError(str(e), DATA_ERROR) from e
    write_report(report, args.out + ".txt", args.out + ".tsv")
    print(render_table(report), end="")
    print(f"wrote {args.out}.txt and {args.out}.tsv")
    return 0


def cmd_predict(args) -> int:
    cfg = _config_from_args(args)
    graph, _, features = _world_and_features(cfg, args.world)
    split = load_split(args.world + ".split")
    bundle = _load_bundle_or_die(args.bundle)
    if not bundle.stage_done("stage2_done"):
        raise CliError("bundle has not completed stage 2", DATA_ERROR)
    ctx = _build_ctx(cfg, graph, split)
    if args.a not in graph.companies or args.b not in graph.companies:
        raise CliError("unknown firm id", DATA_ERROR)
    task = args.task.upper()
    if task == "SRP":
        inst = tasks.build_srp(ctx, args.a, args.b, label=False, with_sic=args.with_sic)
    elif task == "COMP":
        inst = tasks.build_comp(ctx, args.a, args.b, with_sic=args.with_sic)
    else:
        raise CliError(f"unknown task {args.task!r} (use srp or comp)", USAGE_ERROR)
    from .lm import score_choice
    from .tasks import mixed_prompt, prepare

    prep = prepare(inst, bundle.graph_encoder, features)
    prompt = mixed_prompt(prep, bundle.projector)
    yes = (ctx.vocab.encode_word("yes"), EOS)
    no = (ctx.vocab.encode_word("no"), EOS)
    best, nlls = score_choice(bundle.lm, prompt, [yes, no])
    answer = "yes" if best == yes else "no"
    print(answer)
    print(f"nll yes={nlls[0]:.6f} no={nlls[1]:.6f}")
    return 0


def cmd_report(args) -> int:
    try:
        report = parse_tsv(args.report)
    except FileNotFoundError as e:
        raise CliError(f"report not found: {args.report}", DATA_ERROR) from e
    print(render_table(report), end="")
    return 0


def cmd_selftest(args) -> int:
    cfg = _config_from_args(args)
    rng = np.random.default_rng(0)
    for trial in range(1000):
        tp, fp, tn, fn = (int(x) for x in rng.integers(0, 40, size=4))
        if tp + fp + tn + fn == 0:
            continue
        row = EvalRow("s", "SRP", "x", None, tp, fp, tn, fn)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        if abs(row.f_score - f) > 1e-12:
            raise CliError("metric self-test failed", DATA_ERROR)
    print("metric oracle: ok (1000 random confusion matrices)")

    from .graph_encoder import GraphEncoder
    from .lm import LMConfig, init_lm
    from .projector import init_projector
    from .synth import WorldConfig
    from .trainer import ModelBundle

    wc = WorldConfig(n_firms=30, n_industries=3, mean_out_degree=2.5, seed=1)
    graph, _ = generate_world(wc)
    split = build_eval_split(graph, 0.1, seed=2)
    enc = TextEncoder(dim=24, seed=1)
    features = feature_matrix(graph, enc)
    vocab = pipeline.vocab_for_world(graph)
    genc = GraphEncoder(in_dim=24, hidden=10, seed=2, dtype=np.float64)
    genc.freeze()
    model = init_lm(LMConfig(vocab_size=len(vocab), dim=16, blocks=2, heads=2, ff_dim=24,
                             context=256), seed=3, dtype=np.float64)
    model.freeze()
    bundle = ModelBundle(text_encoder=enc, graph_encoder=genc,
                         projector=init_projector(10, 16, seed=4, dtype=np.float64),
                         lm=model, vocab=vocab, neighbor_cap=8)
    ctx = tasks.BuildContext(graph=graph, vocab=vocab, visible=EdgeView(split.train_edges),
                             neighbor_cap=8, seed=5)
    a, b = sorted(split.train_edges)[0]
    inst = tasks.build_srp(ctx, a, b, label=True)
    err = grad_check(bundle, features, inst, epsilon=1e-5, n_coords=20, seed=0)
    if err >= 1e-4:
        raise CliError(f"gradient self-test failed: max rel err {err:.2e}", DATA_ERROR)
    print(f"gradient check: ok (max rel err {err:.2e})")
    return 0


def cmd_show_config(args) -> int:
    cfg = _config_from_args(args)
    print(config_lines(cfg), end="")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="firmrel",
                                     description="supply-graph + language model pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file (or FIRMREL_CONFIG env var)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable; wins over the file)")
        p.add_argument("--seed", type=int, help="base seed overriding all module seeds")

    p = sub.add_parser("gen", help="generate a synthetic world and split")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain-lm", help="pretrain the token model and graph encoder")
    common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain_lm)

    p = sub.add_parser("pretrain-gnn", help="re-run contrastive graph-encoder pretraining")
    common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pretrain_gnn)

    for name, fn in (("stage1", cmd_stage1), ("stage2", cmd_stage2)):
        p = sub.add_parser(name, help=f"{name} projector training")
        common(p)
        p.add_argument("--world", required=True)
        p.add_argument("--bundle", required=True)
        p.add_argument("--out")
        p.set_defaults(func=fn)

    p = sub.add_parser("eval", help="evaluate all systems and write the report")
    common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--stage1-bundle", help="stage-1-only checkpoint for the ablation row")
    p.add_argument("--out", required=True, help="report path stem (.txt/.tsv appended)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="score one firm pair")
    common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--task", default="srp")
    p.add_argument("--with-sic", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="render a saved report file")
    common(p)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="run gradient and metric self-checks")
    common(p)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("show-config", help="print the resolved configuration")
    common(p)
    p.set_defaults(func=cmd_show_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return USAGE_ERROR if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (WorldParseError, IntegrityError, SamplingExhaustedError, StageOrderError,
            CheckpointError, WorldConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_ERROR
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
