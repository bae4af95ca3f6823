"""Two-stage projector training against frozen encoders and LM.

Stage 1 fits the projector on the name-reordering task; stage 2 interleaves
industry-classification and supply-relation batches. Only the projector's
(W, b) receive updates; every other block stays frozen, which the bundle
records with per-block checksums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .data import SupplyGraph
from .graph_encoder import GraphEncoder
from .lm import LMConfig, MixedSequence, ToyLM, Vocab, embed_batch, lm_backward_batch, \
    lm_forward_batch, softmax_xent
from .optim import MomentumSGD
from .projector import Projector
from .rng import make_rng
from .tasks import PreparedInstance, TaskInstance, mixed_prompt, prepare
from .text_encoder import TextEncoder

BLOCK_NAMES = ("text_encoder", "graph_encoder", "projector", "lm", "vocab")


class StageOrderError(RuntimeError):
    """A training or evaluation stage ran before its prerequisite stage."""


@dataclass
class TrainConfig:
    lr: float = 0.05
    epochs: int = 10
    batch_size: int = 16
    momentum: float = 0.9
    grad_clip: float = 1.0
    seed: int = 0
    stage2_mix: tuple[int, int] = (1, 1)  # IC : SRP batch interleave

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0,1)")


@dataclass
class ModelBundle:
    text_encoder: TextEncoder
    graph_encoder: GraphEncoder
    projector: Projector
    lm: ToyLM
    vocab: Vocab
    neighbor_cap: int = 32
    meta: dict[str, str] = field(default_factory=dict)

    def block_payloads(self) -> dict[str, bytes]:
        return {
            "text_encoder": self.text_encoder.state_bytes(),
            "graph_encoder": ckpt.arrays_payload(self.graph_encoder.params),
            "projector": ckpt.arrays_payload({"w": self.projector.w, "b": self.projector.b}),
            "lm": ckpt.arrays_payload(self.lm.params),
            "vocab": self.vocab.to_lines().encode("utf-8"),
        }

    def checksums(self) -> dict[str, str]:
        return {name: ckpt.block_checksum(p) for name, p in self.block_payloads().items()}

    def frozen_ok(self) -> bool:
        """Exactly one trainable block: the projector."""
        frozen = self.graph_encoder.frozen and self.lm.frozen
        gnn_ro = all(not a.flags.writeable for a in self.graph_encoder.params.values())
        lm_ro = all(not a.flags.writeable for a in self.lm.params.values())
        proj_rw = self.projector.w.flags.writeable and self.projector.b.flags.writeable
        return frozen and gnn_ro and lm_ro and proj_rw

    def stage_done(self, stage: str) -> bool:
        return self.meta.get(stage) == "1"


def save_bundle(bundle: ModelBundle, path) -> None:
    cfg = bundle.lm.config
    lm_cfg = (
        f"vocab_size={cfg.vocab_size}\ndim={cfg.dim}\nblocks={cfg.blocks}\n"
        f"heads={cfg.heads}\nff_dim={cfg.ff_dim}\ncontext={cfg.context}\n"
        f"frozen={int(bundle.lm.frozen)}"
    )
    gnn_cfg = (
        f"in_dim={bundle.graph_encoder.in_dim}\nhidden={bundle.graph_encoder.hidden}\n"
        f"frozen={int(bundle.graph_encoder.frozen)}"
    )
    meta_lines = [f"neighbor_cap={bundle.neighbor_cap}"]
    meta_lines += [f"{k}={v}" for k, v in sorted(bundle.meta.items())]
    payloads = bundle.block_payloads()
    blocks = [
        ("meta", ckpt.KIND_TEXT, "\n".join(meta_lines).encode("utf-8")),
        ("lm_cfg", ckpt.KIND_TEXT, lm_cfg.encode("utf-8")),
        ("gnn_cfg", ckpt.KIND_TEXT, gnn_cfg.encode("utf-8")),
        ("vocab", ckpt.KIND_TEXT, payloads["vocab"]),
        ("text_encoder", ckpt.KIND_TEXT, payloads["text_encoder"]),
        ("graph_encoder", ckpt.KIND_ARRAYS, payloads["graph_encoder"]),
        ("projector", ckpt.KIND_ARRAYS, payloads["projector"]),
        ("lm", ckpt.KIND_ARRAYS, payloads["lm"]),
    ]
    ckpt.write_blocks(path, blocks)


def _parse_kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            out[k] = v
    return out


def load_bundle(path) -> ModelBundle:
    blocks = ckpt.read_blocks(path)
    for required in ("meta", "lm_cfg", "gnn_cfg", "vocab", "text_encoder", "graph_encoder",
                     "projector", "lm"):
        if required not in blocks:
            raise ckpt.CheckpointError(f"bundle missing block {required!r}")
    meta = _parse_kv(blocks["meta"][1].decode("utf-8"))
    lm_cfg = _parse_kv(blocks["lm_cfg"][1].decode("utf-8"))
    gnn_cfg = _parse_kv(blocks["gnn_cfg"][1].decode("utf-8"))
    te = _parse_kv(blocks["text_encoder"][1].decode("utf-8").replace(" ", "\n"))

    vocab = Vocab.from_lines(blocks["vocab"][1].decode("utf-8"))
    text_encoder = TextEncoder(dim=int(te["dim"]), seed=int(te["seed"]))

    gnn = GraphEncoder.__new__(GraphEncoder)
    gnn.in_dim = int(gnn_cfg["in_dim"])
    gnn.hidden = int(gnn_cfg["hidden"])
    gnn.params = ckpt.parse_arrays(blocks["graph_encoder"][1])
    gnn.frozen = False
    if gnn_cfg.get("frozen") == "1":
        gnn.freeze()

    proj_arrays = ckpt.parse_arrays(blocks["projector"][1])
    projector = Projector(proj_arrays["w"], proj_arrays["b"])

    cfg = LMConfig(
        vocab_size=int(lm_cfg["vocab_size"]), dim=int(lm_cfg["dim"]),
        blocks=int(lm_cfg["blocks"]), heads=int(lm_cfg["heads"]),
        ff_dim=int(lm_cfg["ff_dim"]), context=int(lm_cfg["context"]),
    )
    model = ToyLM(config=cfg, params=ckpt.parse_arrays(blocks["lm"][1]), vocab=vocab)
    if lm_cfg.get("frozen") == "1":
        model.freeze()

    neighbor_cap = int(meta.pop("neighbor_cap", "32"))
    return ModelBundle(
        text_encoder=text_encoder, graph_encoder=gnn, projector=projector, lm=model,
        vocab=vocab, neighbor_cap=neighbor_cap, meta=meta,
    )


# ---------------------------------------------------------------------------
# projector updates

def _projector_batch_step(
    bundle: ModelBundle, preps: list[PreparedInstance]
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean sequence-NLL over the batch and its gradient wrt (W, b)."""
    model = bundle.lm
    dtype = model.dtype
    seqs, rows, cols, targs = [], [], [], []
    for i, prep in enumerate(preps):
        inst = prep.instance
        if not inst.target:
            raise ValueError("training instance with empty target")
        prompt = mixed_prompt(prep, bundle.projector)
        full = MixedSequence(tokens=prompt.tokens + inst.target, injected=prompt.injected)
        seqs.append(full)
        base = len(prompt) - 1
        for j, t in enumerate(inst.target):
            rows.append(i)
            cols.append(base + j)
            targs.append(t)
    emb, _ = embed_batch(model, seqs)
    logits, cache = lm_forward_batch(model, emb, loss_positions=(np.array(rows), np.array(cols)))
    loss, dlogits = softmax_xent(logits, np.array(targs))
    dlogits = (dlogits / len(preps)).astype(dtype)
    _, demb = lm_backward_batch(model, cache, dlogits, need_param_grads=False)
    dw = np.zeros_like(bundle.projector.w)
    db = np.zeros_like(bundle.projector.b)
    for i, prep in enumerate(preps):
        if len(prep.slot_positions) == 0:
            continue
        d_vec = demb[i, prep.slot_positions]  # (k, d_lm)
        dw += d_vec.T @ prep.node_embeddings.astype(d_vec.dtype)
        db += d_vec.sum(axis=0)
    return loss / len(preps), {"w": dw, "b": db}


def _run_stage(
    bundle: ModelBundle,
    prepared: list[PreparedInstance],
    cfg: TrainConfig,
    stage_tag: str,
    schedule: list[list[int]] | None = None,
) -> list[float]:
    if not bundle.frozen_ok():
        raise StageOrderError("bundle must have frozen encoders/LM and a trainable projector")
    params = {"w": bundle.projector.w, "b": bundle.projector.b}
    opt = MomentumSGD(params, lr=cfg.lr, momentum=cfg.momentum, grad_clip=cfg.grad_clip)
    rng = make_rng(cfg.seed, stage_tag)
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        if schedule is not None:
            batches = schedule
        else:
            order = rng.permutation(len(prepared))
            batches = [
                list(order[s : s + cfg.batch_size])
                for s in range(0, len(order), cfg.batch_size)
            ]
        total, count = 0.0, 0
        for batch in batches:
            if not batch:
                continue
            loss, grads = _projector_batch_step(bundle, [prepared[i] for i in batch])
            opt.step(params, grads)
            total += loss * len(batch)
            count += len(batch)
        losses.append(total / max(count, 1))
    return losses


def stage1_train(
    bundle: ModelBundle,
    features: dict[int, np.ndarray],
    instances: list[TaskInstance],
    cfg: TrainConfig,
) -> list[float]:
    """Fit the projector on name-reordering instances; returns epoch losses."""
    for inst in instances:
        if inst.task_kind != "CGM":
            raise ValueError(f"stage 1 accepts CGM instances only, got {inst.task_kind}")
    prepared = [prepare(i, bundle.graph_encoder, features) for i in instances]
    losses = _run_stage(bundle, prepared, cfg, "stage1")
    bundle.meta["stage1_done"] = "1"
    return losses


def stage2_train(
    bundle: ModelBundle,
    features: dict[int, np.ndarray],
    ic_instances: list[TaskInstance],
    srp_instances: list[TaskInstance],
    cfg: TrainConfig,
) -> list[float]:
    """Interleave IC and SRP batches at the configured mix; returns epoch losses."""
    if not bundle.stage_done("stage1_done"):
        raise StageOrderError("stage 2 requires a completed stage 1")
    for inst in ic_instances:
        if inst.task_kind != "IC":
            raise ValueError("ic_instances must be IC")
    for inst in srp_instances:
        if inst.task_kind != "SRP":
            raise ValueError("srp_instances must be SRP")
    prepared = [prepare(i, bundle.graph_encoder, features) for i in ic_instances + srp_instances]
    ic_idx = list(range(len(ic_instances)))
    srp_idx = list(range(len(ic_instances), len(prepared)))

    params = {"w": bundle.projector.w, "b": bundle.projector.b}
    opt = MomentumSGD(params, lr=cfg.lr, momentum=cfg.momentum, grad_clip=cfg.grad_clip)
    rng = make_rng(cfg.seed, "stage2")
    mix_ic, mix_srp = cfg.stage2_mix
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        ic_batches = _make_batches(ic_idx, cfg.batch_size, rng)
        srp_batches = _make_batches(srp_idx, cfg.batch_size, rng)
        batches = _interleave(ic_batches, srp_batches, mix_ic, mix_srp)
        total, count = 0.0, 0
        for batch in batches:
            loss, grads = _projector_batch_step(bundle, [prepared[i] for i in batch])
            opt.step(params, grads)
            total += loss * len(batch)
            count += len(batch)
        losses.append(total / max(count, 1))
    bundle.meta["stage2_done"] = "1"
    return losses


def _make_batches(idx: list[int], batch_size: int, rng) -> list[list[int]]:
    if not idx:
        return []
    order = rng.permutation(len(idx))
    return [
        [idx[j] for j in order[s : s + batch_size]]
        for s in range(0, len(order), batch_size)
    ]


def _interleave(a: list[list[int]], b: list[list[int]], na: int, nb: int) -> list[list[int]]:
    out: list[list[int]] = []
    ia = ib = 0
    while ia < len(a) or ib < len(b):
        for _ in range(na):
            if ia < len(a):
                out.append(a[ia])
                ia += 1
        for _ in range(nb):
            if ib < len(b):
                out.append(b[ib])
                ib += 1
    return out


# ---------------------------------------------------------------------------
# gradient verification

def grad_check(
    bundle: ModelBundle,
    features: dict[int, np.ndarray],
    instance: TaskInstance,
    epsilon: float = 1e-5,
    n_coords: int = 20,
    seed: int = 0,
    coords: list[int] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients
    of the instance NLL wrt the projector, in double precision.

    Coordinates index the flattened (W, then b) parameter vector; by default
    at least ``n_coords`` are drawn at random.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not instance.target:
        raise ValueError("instance has no target to score")
    model = bundle.lm.astype(np.float64)
    proj = bundle.projector.astype(np.float64)
    prep = prepare(instance, bundle.graph_encoder, features)
    prep.node_embeddings = prep.node_embeddings.astype(np.float64)
    b64 = ModelBundle(
        text_encoder=bundle.text_encoder, graph_encoder=bundle.graph_encoder,
        projector=proj, lm=model, vocab=bundle.vocab, neighbor_cap=bundle.neighbor_cap,
    )
    _, grads = _projector_batch_step(b64, [prep])

    def nll() -> float:
        loss, _ = _projector_batch_step(b64, [prep])
        return loss

    w, b = proj.w, proj.b
    total = w.size + b.size
    if coords is None:
        rng = make_rng(seed, "grad_check")
        coords = rng.choice(total, size=min(n_coords, total), replace=False)
    worst = 0.0
    for c in coords:
        arr, g, i = (w, grads["w"], int(c)) if c < w.size else (b, grads["b"], int(c - w.size))
        flat = arr.ravel()
        old = flat[i]
        flat[i] = old + epsilon
        up = nll()
        flat[i] = old - epsilon
        down = nll()
        flat[i] = old
        numeric = (up - down) / (2 * epsilon)
        analytic = g.ravel()[i]
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-12)
        worst = max(worst, rel)
    return worst
