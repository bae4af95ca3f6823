"""Metrics and the protocol runner producing per-system report tables.

F-score is the primary metric (2PR/(P+R), zero when P+R is zero); accuracy,
precision, recall and raw confusion counts ride along. GNN baselines get no
SIC prompt variants and no competitor rows; prompt-consuming systems are
evaluated on both SIC variants of both link splits plus the zero-shot
competitor set.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Edge, LabeledPair, SupplyGraph, SplitSpec, sample_pairs
from .lm import embed_batch, lm_forward_batch
from .rng import mix_seed
from .tasks import BuildContext, TaskInstance, build_comp, build_srp, build_text_pair, \
    mixed_prompt, prepare
from .trainer import ModelBundle, StageOrderError


@dataclass(frozen=True)
class EvalRow:
    system: str
    task: str  # SRP | COMP
    split: str  # inductive | fully_inductive | competitor
    with_sic: bool | None  # None for systems without prompt variants
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f_score(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    seed: int = 0
    run_id: str = ""

    def find(self, system: str, task: str, split: str, with_sic: bool | None) -> EvalRow:
        for r in self.rows:
            if (r.system, r.task, r.split, r.with_sic) == (system, task, split, with_sic):
                return r
        raise KeyError((system, task, split, with_sic))


def evaluate(scorer, pairs: list[LabeledPair] | tuple[LabeledPair, ...],
             system: str = "", task: str = "SRP", split: str = "",
             with_sic: bool | None = None) -> EvalRow:
    """Exact confusion counts for a pair->bool scorer on labeled pairs."""
    if not pairs:
        raise ValueError("cannot evaluate an empty pair set")
    preds = scorer([(a, b) for a, b, _ in pairs])
    tp = fp = tn = fn = 0
    for (_, _, label), pred in zip(pairs, preds):
        if pred and label:
            tp += 1
        elif pred and not label:
            fp += 1
        elif not pred and not label:
            tn += 1
        else:
            fn += 1
    return EvalRow(system, task, split, with_sic, tp, fp, tn, fn)


# ---------------------------------------------------------------------------
# LM-based pair scoring

def make_lm_scorer(
    bundle: ModelBundle,
    ctx: BuildContext,
    features: dict[int, np.ndarray],
    task: str,
    with_sic: bool,
    graph_blind: bool = False,
    batch_pairs: int = 16,
):
    """pair -> bool scorer comparing the yes/no NLL at the answer position.

    Both answers are single tokens, so one forward pass per pair scores both;
    ties break toward the lexicographically smaller token id.
    """
    yes_id = ctx.vocab.encode_word("yes")
    no_id = ctx.vocab.encode_word("no")

    def build(a: int, b: int) -> TaskInstance:
        if graph_blind:
            return build_text_pair(ctx, task, a, b, with_sic=with_sic)
        if task == "SRP":
            return build_srp(ctx, a, b, label=False, with_sic=with_sic)
        return build_comp(ctx, a, b, with_sic=with_sic)

    def scorer(pairs: list[Edge]) -> list[bool]:
        out: list[bool] = []
        for start in range(0, len(pairs), batch_pairs):
            chunk = pairs[start : start + batch_pairs]
            prompts = []
            for a, b in chunk:
                inst = build(a, b)
                prep = prepare(inst, bundle.graph_encoder, features)
                prompts.append(mixed_prompt(prep, bundle.projector))
            emb, _ = embed_batch(bundle.lm, prompts)
            rows = np.arange(len(chunk))
            cols = np.array([len(p) - 1 for p in prompts])
            logits, _ = lm_forward_batch(
                bundle.lm, emb, loss_positions=(rows, cols), need_cache=False
            )
            for i in range(len(chunk)):
                ly, ln = float(logits[i, yes_id]), float(logits[i, no_id])
                if ly == ln:
                    out.append(yes_id < no_id)
                else:
                    out.append(ly > ln)
        return out

    return scorer


def lm_text_baseline(
    bundle: ModelBundle, ctx: BuildContext, features: dict[int, np.ndarray],
    pairs: list[Edge], with_sic: bool, task: str = "SRP",
) -> list[bool]:
    """Graph-blind predictions from the pretrained LM alone (no stages needed)."""
    scorer = make_lm_scorer(bundle, ctx, features, task, with_sic, graph_blind=True)
    return scorer(pairs)


# ---------------------------------------------------------------------------
# competitor evaluation set

def competitor_eval_pairs(
    graph: SupplyGraph, competitors: frozenset[Edge], max_positives: int, seed: int
) -> tuple[LabeledPair, ...]:
    """Balanced zero-shot competitor set: sampled positives + non-competitor pairs."""
    pos_all = sorted(competitors)
    k = min(max_positives, len(pos_all))
    if k == 0:
        return ()
    rng = np.random.Generator(np.random.PCG64(mix_seed(seed, "comp_pos")))
    idx = sorted(rng.choice(len(pos_all), size=k, replace=False))
    pos = [pos_all[i] for i in idx]
    neg = sample_pairs(
        graph, k, "any_unordered", mix_seed(seed, "comp_neg"), forbidden=competitors
    )
    return tuple((a, b, True) for a, b in pos) + tuple((a, b, False) for a, b in neg)


# ---------------------------------------------------------------------------
# full matrix

def run_matrix(
    full_bundle: ModelBundle,
    cgm_bundle: ModelBundle,
    gnn_models: dict[str, object],
    graph: SupplyGraph,
    split: SplitSpec,
    ctx: BuildContext,
    features: dict[int, np.ndarray],
    competitor_pairs: tuple[LabeledPair, ...],
    seed: int = 0,
) -> EvalReport:
    """Evaluate every system on the link splits (and LM systems on competitors)."""
    if not full_bundle.stage_done("stage2_done"):
        raise StageOrderError("evaluation requires a stage-2 trained bundle")
    link_sets = {
        "inductive": split.inductive_pairs,
        "fully_inductive": split.fully_inductive_pairs,
    }
    report = EvalReport(seed=seed, run_id=_run_id(split, seed))
    for name, model in sorted(gnn_models.items()):
        for split_name, pairs in link_sets.items():
            report.rows.append(
                evaluate(model.predict, pairs, system=name, task="SRP",
                         split=split_name, with_sic=None)
            )
    lm_systems = [
        ("text_lm", None, True),
        ("cgm_only", cgm_bundle, False),
        ("full_model", full_bundle, False),
    ]
    for sys_name, bundle, graph_blind in lm_systems:
        b = bundle if bundle is not None else full_bundle
        for with_sic in (False, True):
            for split_name, pairs in link_sets.items():
                scorer = make_lm_scorer(b, ctx, features, "SRP", with_sic,
                                        graph_blind=graph_blind)
                report.rows.append(
                    evaluate(scorer, pairs, system=sys_name, task="SRP",
                             split=split_name, with_sic=with_sic)
                )
            if competitor_pairs:
                scorer = make_lm_scorer(b, ctx, features, "COMP", with_sic,
                                        graph_blind=graph_blind)
                report.rows.append(
                    evaluate(scorer, competitor_pairs, system=sys_name, task="COMP",
                             split="competitor", with_sic=with_sic)
                )
    return report


def _run_id(split: SplitSpec, seed: int) -> str:
    h = hashlib.blake2s(digest_size=6)
    h.update(str(split.seed).encode())
    h.update(str(seed).encode())
    h.update(str(len(split.train_firms)).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# report files

_COLUMNS = ("system", "task", "split", "with_sic", "n", "tp", "fp", "tn", "fn",
            "accuracy", "precision", "recall", "f_score")


def _row_values(r: EvalRow) -> tuple[str, ...]:
    sic = "--" if r.with_sic is None else ("yes" if r.with_sic else "no")
    return (
        r.system, r.task, r.split, sic, str(r.n), str(r.tp), str(r.fp), str(r.tn),
        str(r.fn), f"{r.accuracy:.4f}", f"{r.precision:.4f}", f"{r.recall:.4f}",
        f"{r.f_score:.4f}",
    )


def render_table(report: EvalReport) -> str:
    rows = [_COLUMNS] + [_row_values(r) for r in report.rows]
    widths = [max(len(row[i]) for row in rows) for i in range(len(_COLUMNS))]
    lines = [f"run_id={report.run_id} seed={report.seed}"]
    for i, row in enumerate(rows):
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_tsv(report: EvalReport) -> str:
    lines = ["\t".join(_COLUMNS + ("run_id", "seed"))]
    for r in report.rows:
        lines.append("\t".join(_row_values(r) + (report.run_id, str(report.seed))))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, text_path: str | Path, tsv_path: str | Path) -> None:
    Path(text_path).write_text(render_table(report), encoding="utf-8")
    Path(tsv_path).write_text(render_tsv(report), encoding="utf-8")


def parse_tsv(path: str | Path) -> EvalReport:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split("\t")
    report = EvalReport()
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = dict(zip(header, line.split("\t")))
        report.rows.append(
            EvalRow(
                system=rec["system"], task=rec["task"], split=rec["split"],
                with_sic=None if rec["with_sic"] == "--" else rec["with_sic"] == "yes",
                tp=int(rec["tp"]), fp=int(rec["fp"]), tn=int(rec["tn"]), fn=int(rec["fn"]),
            )
        )
        report.run_id = rec.get("run_id", "")
        report.seed = int(rec.get("seed", "0"))
    return report
