"""Builders for the four prompt-formatted tasks with graph-slot wiring.

Every instance is rebuilt deterministically from (task kind, firm ids,
with_sic, label) plus a build context; instance files never store prompts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import templates
from .data import EdgeView, Subgraph, SupplyGraph, ego_subgraph
from .lm import BOS, EOS, GSLOT, MixedSequence, Vocab
from .rng import make_rng

DELIM = "|"


class SkipInstance(Exception):
    """Raised for firms that cannot form a usable instance (singleton CGM)."""


@dataclass(frozen=True)
class TaskInstance:
    task_kind: str  # CGM | IC | SRP | COMP
    tokens: tuple[int, ...]  # prompt ids; GSLOT at graph-token positions
    slots: tuple[tuple[int, Subgraph], ...]  # (start position, source subgraph)
    target: tuple[int, ...]  # output ids ending in EOS; empty for COMP
    with_sic: bool
    label: bool | None
    firm_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if GSLOT in self.target:
            raise ValueError("graph slot token cannot appear in a target")

    def slot_count(self) -> int:
        return sum(1 for t in self.tokens if t == GSLOT)


@dataclass(frozen=True)
class BuildContext:
    """Everything needed to rebuild instances deterministically."""

    graph: SupplyGraph
    vocab: Vocab
    visible: EdgeView
    neighbor_cap: int = 32
    seed: int = 0


def desc_text(graph: SupplyGraph, firm_id: int) -> str:
    return " ".join(f"w{t}" for t in graph.companies[firm_id].description)


def connections_text(graph: SupplyGraph, firm_id: int, view: EdgeView, exclude: int | None = None) -> str:
    nbrs = [n for n in view.neighbors(firm_id) if n != exclude]
    if not nbrs:
        return "none"
    return f" {DELIM} ".join(graph.companies[n].name for n in nbrs)


def _tokenize_template(
    template: str, fields: dict[str, str], slot_subs: dict[str, Subgraph], vocab: Vocab
) -> tuple[tuple[int, ...], tuple[tuple[int, Subgraph], ...]]:
    tokens: list[int] = [BOS]
    slots: list[tuple[int, Subgraph]] = []
    for word in template.split():
        if word.startswith("<graph") and word.endswith(">"):
            sub = slot_subs[word]
            slots.append((len(tokens), sub))
            tokens.extend([GSLOT] * len(sub.members))
        elif word.startswith("{") and word.endswith("}"):
            tokens.extend(vocab.encode_word(w) for w in fields[word[1:-1]].split())
        else:
            tokens.append(vocab.encode_word(word))
    return tuple(tokens), tuple(slots)


def _with_sic_template(template: str, field_names: tuple[str, ...]) -> str:
    """Insert an Industry clause directly after each description field."""
    out = template
    for i, fname in enumerate(field_names, start=1):
        sic_field = "{sic}" if len(field_names) == 1 else f"{{sic{i}}}"
        out = out.replace(
            "{" + fname + "}", "{" + fname + "} " + templates.SIC_CLAUSE.replace("{sic}", sic_field)
        )
    return out


def build_cgm(ctx: BuildContext, center: int, sub: Subgraph | None = None) -> TaskInstance:
    """Reorder a shuffled firm-name list to match graph-token order."""
    if sub is None:
        sub = ego_subgraph(ctx.graph, center, ctx.visible, cap=ctx.neighbor_cap, seed=ctx.seed)
    if len(sub.members) < 2:
        raise SkipInstance(f"firm {center}: singleton subgraph is unmatchable")
    names = [ctx.graph.companies[m].name for m in sub.members]
    rng = make_rng(ctx.seed, "cgm_shuffle", center)
    shuffled = [names[i] for i in rng.permutation(len(names))]
    fields = {"company_names": f" {DELIM} ".join(shuffled)}
    tokens, slots = _tokenize_template(templates.CGM, fields, {"<graph>": sub}, ctx.vocab)
    target_text = f" {DELIM} ".join(names)
    target = tuple(ctx.vocab.encode_word(w) for w in target_text.split()) + (EOS,)
    return TaskInstance("CGM", tokens, slots, target, False, None, (center,))


def build_ic(ctx: BuildContext, center: int, sub: Subgraph | None = None) -> TaskInstance:
    """Classify the center firm's industry category from text plus subgraph."""
    if sub is None:
        sub = ego_subgraph(ctx.graph, center, ctx.visible, cap=ctx.neighbor_cap, seed=ctx.seed)
    if sub.center != center:
        raise ValueError("subgraph center does not match the firm")
    c = ctx.graph.companies[center]
    fields = {"company_description": desc_text(ctx.graph, center), "company_name": c.name}
    tokens, slots = _tokenize_template(templates.IC, fields, {"<graph>": sub}, ctx.vocab)
    target = tuple(ctx.vocab.encode_word(w) for w in c.sic_label.split()) + (EOS,)
    return TaskInstance("IC", tokens, slots, target, False, None, (center,))


def _pair_instance(
    ctx: BuildContext, kind: str, a: int, b: int, label: bool | None, with_sic: bool
) -> TaskInstance:
    if a == b:
        raise ValueError("the two firms must differ")
    sub_a = ego_subgraph(ctx.graph, a, ctx.visible, cap=ctx.neighbor_cap, seed=ctx.seed,
                         exclude=(b,))
    sub_b = ego_subgraph(ctx.graph, b, ctx.visible, cap=ctx.neighbor_cap, seed=ctx.seed,
                         exclude=(a,))
    ca, cb = ctx.graph.companies[a], ctx.graph.companies[b]
    template = templates.SRP if kind == "SRP" else templates.COMP
    fields = {
        "company1_description": desc_text(ctx.graph, a),
        "company1_name": ca.name,
        "company2_description": desc_text(ctx.graph, b),
        "company2_name": cb.name,
    }
    if with_sic:
        template = _with_sic_template(
            template, ("company1_description", "company2_description")
        )
        fields["sic1"] = ca.sic_label
        fields["sic2"] = cb.sic_label
    tokens, slots = _tokenize_template(
        template, fields, {"<graph1>": sub_a, "<graph2>": sub_b}, ctx.vocab
    )
    if kind == "SRP":
        target = (ctx.vocab.encode_word("yes" if label else "no"), EOS)
    else:
        target = ()
    return TaskInstance(kind, tokens, slots, target, with_sic, label, (a, b))


def build_srp(ctx: BuildContext, a: int, b: int, label: bool, with_sic: bool = False) -> TaskInstance:
    """Directed supply-relation query: does a supply b? Target yes/no."""
    return _pair_instance(ctx, "SRP", a, b, label, with_sic)


def build_comp(ctx: BuildContext, a: int, b: int, label: bool | None = None,
               with_sic: bool = False) -> TaskInstance:
    """Competitor query with the same input shape as SRP; evaluation only."""
    return _pair_instance(ctx, "COMP", a, b, label, with_sic)


def build_text_pair(
    ctx: BuildContext, kind: str, a: int, b: int, label: bool | None = None,
    with_sic: bool = False,
) -> TaskInstance:
    """Graph-blind prompt: neighborhoods rendered as a text clause, no slots."""
    if a == b:
        raise ValueError("the two firms must differ")
    ca, cb = ctx.graph.companies[a], ctx.graph.companies[b]
    template = templates.TEXT_SRP if kind == "SRP" else templates.TEXT_COMP
    fields = {
        "company1_description": desc_text(ctx.graph, a),
        "company1_name": ca.name,
        "company1_connections": connections_text(ctx.graph, a, ctx.visible),
        "company2_description": desc_text(ctx.graph, b),
        "company2_name": cb.name,
        "company2_connections": connections_text(ctx.graph, b, ctx.visible),
    }
    if with_sic:
        template = _with_sic_template(
            template, ("company1_description", "company2_description")
        )
        fields["sic1"] = ca.sic_label
        fields["sic2"] = cb.sic_label
    tokens, slots = _tokenize_template(template, fields, {}, ctx.vocab)
    return TaskInstance(f"TEXT_{kind}", tokens, slots, (), with_sic, label, (a, b))


# ---------------------------------------------------------------------------
# rendering (template fidelity)

def render_with_markers(instance: TaskInstance, vocab: Vocab) -> str:
    """Render the prompt, collapsing each graph-token run to its marker word."""
    markers = ["<graph>"] if len(instance.slots) == 1 else ["<graph1>", "<graph2>"]
    words: list[str] = []
    i = 1  # skip BOS
    slot_idx = 0
    tokens = instance.tokens
    while i < len(tokens):
        if tokens[i] == GSLOT:
            start, sub = instance.slots[slot_idx]
            assert start == i
            words.append(markers[slot_idx])
            i += len(sub.members)
            slot_idx += 1
        else:
            words.append(vocab.tokens[tokens[i]])
            i += 1
    return " ".join(words)


# ---------------------------------------------------------------------------
# instance files: task_kind|ids|with_sic|label

def save_instances(instances: list[TaskInstance], path: str | Path) -> None:
    lines = []
    for inst in instances:
        ids = ",".join(str(i) for i in inst.firm_ids)
        label = "-" if inst.label is None else str(int(inst.label))
        lines.append(f"{inst.task_kind}|{ids}|{int(inst.with_sic)}|{label}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_instances(path: str | Path, ctx: BuildContext) -> list[TaskInstance]:
    out = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("|")
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 4 fields")
        kind, ids_s, sic_s, label_s = parts
        ids = tuple(int(x) for x in ids_s.split(","))
        with_sic = bool(int(sic_s))
        label = None if label_s == "-" else bool(int(label_s))
        if kind == "CGM":
            out.append(build_cgm(ctx, ids[0]))
        elif kind == "IC":
            out.append(build_ic(ctx, ids[0]))
        elif kind == "SRP":
            out.append(build_srp(ctx, ids[0], ids[1], bool(label), with_sic))
        elif kind == "COMP":
            out.append(build_comp(ctx, ids[0], ids[1], label, with_sic))
        else:
            raise ValueError(f"line {lineno}: unknown task kind {kind!r}")
    return out


# ---------------------------------------------------------------------------
# materialization

@dataclass
class PreparedInstance:
    """Instance with frozen graph-encoder outputs attached, ready to train on."""

    instance: TaskInstance
    node_embeddings: np.ndarray  # (total slot tokens, d_g), concatenated runs
    slot_positions: np.ndarray  # (total slot tokens,) positions in the prompt


def prepare(instance: TaskInstance, encoder, features: dict[int, np.ndarray]) -> PreparedInstance:
    embs = []
    positions = []
    for start, sub in instance.slots:
        h = encoder.encode(sub, features)
        embs.append(h)
        positions.extend(range(start, start + len(sub.members)))
    node_embeddings = (
        np.concatenate(embs, axis=0) if embs else np.zeros((0, encoder.hidden))
    )
    return PreparedInstance(instance, node_embeddings, np.array(positions, dtype=np.int64))


def mixed_prompt(prep: PreparedInstance, projector) -> MixedSequence:
    """Apply the projector to the cached node embeddings and wire the slots."""
    vecs = projector.project(prep.node_embeddings) if len(prep.slot_positions) else ()
    injected = tuple(
        (int(pos), vecs[i]) for i, pos in enumerate(prep.slot_positions)
    )
    return MixedSequence(tokens=prep.instance.tokens, injected=injected)
