"""Small frozen decoder-only token model with graph-token injection.

The model is a standard pre-norm causal transformer written directly in
numpy, with an explicit backward pass. Inputs are mixed sequences: ordinary
token ids pass through the embedding table, while injected vectors (projected
graph embeddings) bypass the table and enter the first block directly.
Position embeddings are added at every position, injected or not, so an
injected vector equal to an embedding row is indistinguishable from the
token itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import make_rng

PAD, BOS, EOS, GSLOT = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<graph>")
N_FALLBACK = 16

LN_EPS = 1e-5


# ---------------------------------------------------------------------------
# vocabulary

class Vocab:
    """Bijective token<->id map. Ids 0..3 are reserved; the next N_FALLBACK
    ids are hash buckets for out-of-vocabulary words."""

    def __init__(self, words: list[str] | tuple[str, ...]):
        fallback = tuple(f"<unk{i}>" for i in range(N_FALLBACK))
        base = RESERVED_TOKENS + fallback
        seen = set(base)
        extra: list[str] = []
        for w in words:
            if " " in w or not w:
                raise ValueError(f"vocab word must be non-empty and space-free: {w!r}")
            if w not in seen:
                seen.add(w)
                extra.append(w)
        self.tokens: tuple[str, ...] = base + tuple(sorted(extra))
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode_word(self, word: str) -> int:
        i = self.index.get(word)
        if i is not None:
            return i
        bucket = sum(word.encode("utf-8")) % N_FALLBACK
        return len(RESERVED_TOKENS) + bucket

    def encode_text(self, text: str) -> list[int]:
        return [self.encode_word(w) for w in text.split()]

    def decode(self, ids: list[int] | tuple[int, ...] | np.ndarray) -> str:
        return " ".join(self.tokens[int(i)] for i in ids)

    def to_lines(self) -> str:
        return "\n".join(self.tokens) + "\n"

    @classmethod
    def from_lines(cls, text: str) -> "Vocab":
        lines = text.splitlines()
        v = cls.__new__(cls)
        v.tokens = tuple(lines)
        v.index = {t: i for i, t in enumerate(v.tokens)}
        if v.tokens[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise ValueError("vocab file does not start with the reserved tokens")
        return v


def build_vocab(
    descriptions: list[str], names: list[str], sic_labels: list[str],
    template_words: list[str], extra_words: list[str] = (),
) -> Vocab:
    words: list[str] = []
    words.extend(descriptions)
    words.extend(names)
    for label in sic_labels:
        words.extend(label.split())
    for t in template_words:
        words.extend(t.split())
    words.extend(extra_words)
    words.extend(["yes", "no", "|", "Industry:", "Connections:", "none"])
    return Vocab(words)


# ---------------------------------------------------------------------------
# model

@dataclass
class LMConfig:
    vocab_size: int
    dim: int = 96
    blocks: int = 2
    heads: int = 4
    ff_dim: int = 192
    context: int = 512

    def __post_init__(self) -> None:
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")


@dataclass
class ToyLM:
    config: LMConfig
    params: dict[str, np.ndarray]
    frozen: bool = False
    vocab: Vocab | None = None

    @property
    def dtype(self) -> np.dtype:
        return self.params["tok_emb"].dtype

    def freeze(self) -> None:
        for a in self.params.values():
            a.flags.writeable = False
        self.frozen = True

    def astype(self, dtype) -> "ToyLM":
        m = ToyLM(
            config=self.config,
            params={k: v.astype(dtype) for k, v in self.params.items()},
            frozen=False,
            vocab=self.vocab,
        )
        if self.frozen:
            m.freeze()
        return m


def init_lm(config: LMConfig, seed: int, dtype=np.float32) -> ToyLM:
    rng = make_rng(seed, "lm_init")
    d, f, v, c = config.dim, config.ff_dim, config.vocab_size, config.context

    def lin(n_in, n_out):
        return (rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)).astype(dtype)

    p: dict[str, np.ndarray] = {
        "tok_emb": (0.05 * rng.standard_normal((v, d))).astype(dtype),
        "pos_emb": (0.05 * rng.standard_normal((c, d))).astype(dtype),
    }
    for b in range(config.blocks):
        p[f"b{b}.ln1.g"] = np.ones(d, dtype=dtype)
        p[f"b{b}.ln1.b"] = np.zeros(d, dtype=dtype)
        p[f"b{b}.attn.w_qkv"] = lin(d, 3 * d)
        p[f"b{b}.attn.b_qkv"] = np.zeros(3 * d, dtype=dtype)
        p[f"b{b}.attn.w_o"] = lin(d, d)
        p[f"b{b}.attn.b_o"] = np.zeros(d, dtype=dtype)
        p[f"b{b}.ln2.g"] = np.ones(d, dtype=dtype)
        p[f"b{b}.ln2.b"] = np.zeros(d, dtype=dtype)
        p[f"b{b}.ff.w1"] = lin(d, f)
        p[f"b{b}.ff.b1"] = np.zeros(f, dtype=dtype)
        p[f"b{b}.ff.w2"] = lin(f, d)
        p[f"b{b}.ff.b2"] = np.zeros(d, dtype=dtype)
    p["ln_f.g"] = np.ones(d, dtype=dtype)
    p["ln_f.b"] = np.zeros(d, dtype=dtype)
    p["head.w"] = lin(d, v)
    p["head.b"] = np.zeros(v, dtype=dtype)
    return ToyLM(config=config, params=p)


# ---------------------------------------------------------------------------
# mixed sequences

@dataclass(frozen=True)
class MixedSequence:
    """Token ids with optional injected embedding vectors.

    ``tokens`` holds GSLOT at injected positions; ``injected`` is a tuple of
    (position, vector) pairs replacing the embedding-table lookup there.
    """

    tokens: tuple[int, ...]
    injected: tuple[tuple[int, np.ndarray], ...] = ()

    def __len__(self) -> int:
        return len(self.tokens)

    def __post_init__(self) -> None:
        for pos, _ in self.injected:
            if not 0 <= pos < len(self.tokens):
                raise ValueError(f"injected position {pos} out of range")
            if self.tokens[pos] != GSLOT:
                raise ValueError(f"injected position {pos} does not hold a graph slot")


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m = dxhat.mean(axis=-1, keepdims=True)
    mx = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m - xhat * mx)
    return dx, dg, db


def _split_heads(x, heads):
    b, l, d = x.shape
    return x.reshape(b, l, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def lm_forward_batch(
    model: ToyLM,
    emb: np.ndarray,
    loss_positions: tuple[np.ndarray, np.ndarray] | None = None,
    need_cache: bool = True,
):
    """Run the decoder stack on input embeddings (B, L, d).

    Returns (logits, cache). With ``loss_positions`` (rows, cols), logits are
    computed only at those positions, shape (M, V); otherwise (B, L, V).
    """
    p = model.params
    cfg = model.config
    B, L, d = emb.shape
    if L > cfg.context:
        raise ValueError(f"sequence length {L} exceeds context {cfg.context}")
    dtype = emb.dtype
    scale = np.asarray(1.0 / np.sqrt(d // cfg.heads), dtype=dtype)
    causal = np.triu(np.full((L, L), -np.inf, dtype=dtype), k=1)

    x = emb
    blocks = []
    for bi in range(cfg.blocks):
        h, ln1c = _layernorm_fwd(x, p[f"b{bi}.ln1.g"], p[f"b{bi}.ln1.b"])
        qkv = h @ p[f"b{bi}.attn.w_qkv"] + p[f"b{bi}.attn.b_qkv"]
        q, k, v = (
            _split_heads(qkv[..., :d], cfg.heads),
            _split_heads(qkv[..., d : 2 * d], cfg.heads),
            _split_heads(qkv[..., 2 * d :], cfg.heads),
        )
        scores = q @ k.transpose(0, 1, 3, 2)
        scores *= scale
        scores += causal
        scores -= scores.max(axis=-1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=-1, keepdims=True)
        attn = scores
        ctx = _merge_heads(attn @ v)
        ao = ctx @ p[f"b{bi}.attn.w_o"] + p[f"b{bi}.attn.b_o"]
        x1 = x + ao
        h2, ln2c = _layernorm_fwd(x1, p[f"b{bi}.ln2.g"], p[f"b{bi}.ln2.b"])
        z = h2 @ p[f"b{bi}.ff.w1"] + p[f"b{bi}.ff.b1"]
        r = np.maximum(z, 0)
        ff = r @ p[f"b{bi}.ff.w2"] + p[f"b{bi}.ff.b2"]
        x2 = x1 + ff
        blocks.append((h, ln1c, q, k, v, attn, ctx, h2, ln2c, z, r) if need_cache else None)
        x = x2

    y, lnfc = _layernorm_fwd(x, p["ln_f.g"], p["ln_f.b"])
    if loss_positions is not None:
        rows, cols = loss_positions
        y_sel = y[rows, cols]
        logits = y_sel @ p["head.w"] + p["head.b"]
        cache = (emb.shape, blocks, lnfc, y_sel, loss_positions) if need_cache else None
    else:
        logits = y @ p["head.w"] + p["head.b"]
        cache = (emb.shape, blocks, lnfc, y, None) if need_cache else None
    return logits, cache


def lm_backward_batch(model: ToyLM, cache, dlogits: np.ndarray, need_param_grads: bool = True):
    """Backward through the stack; returns (param grads, d_input_emb).

    With ``need_param_grads=False`` only the input-embedding gradient is
    produced (enough to train an upstream projector against a frozen model).
    """
    p = model.params
    cfg = model.config
    (B, L, d), blocks, lnfc, y_saved, loss_positions = cache
    dtype = dlogits.dtype
    grads: dict[str, np.ndarray] = {}

    if loss_positions is not None:
        rows, cols = loss_positions
        if need_param_grads:
            grads["head.w"] = y_saved.T @ dlogits
            grads["head.b"] = dlogits.sum(axis=0)
        dy_sel = dlogits @ p["head.w"].T
        dy = np.zeros((B, L, d), dtype=dtype)
        np.add.at(dy, (rows, cols), dy_sel)
    else:
        if need_param_grads:
            grads["head.w"] = y_saved.reshape(-1, d).T @ dlogits.reshape(-1, dlogits.shape[-1])
            grads["head.b"] = dlogits.sum(axis=(0, 1))
        dy = dlogits @ p["head.w"].T

    dx, dg_f, db_f = _layernorm_bwd(dy, lnfc)
    if need_param_grads:
        grads["ln_f.g"], grads["ln_f.b"] = dg_f, db_f

    scale = np.asarray(1.0 / np.sqrt(d // cfg.heads), dtype=dtype)
    for bi in reversed(range(cfg.blocks)):
        h, ln1c, q, k, v, attn, ctx, h2, ln2c, z, r = blocks[bi]
        # feed-forward
        dff = dx
        dr = dff @ p[f"b{bi}.ff.w2"].T
        dz = dr * (z > 0)
        dh2 = dz @ p[f"b{bi}.ff.w1"].T
        dx1_ln, dg2, db2 = _layernorm_bwd(dh2, ln2c)
        dx1 = dx + dx1_ln
        # attention
        dao = dx1
        dctx = _split_heads(dao @ p[f"b{bi}.attn.w_o"].T, cfg.heads)
        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = dscores @ k * scale
        dk = dscores.transpose(0, 1, 3, 2) @ q * scale
        dqkv = np.concatenate(
            [_merge_heads(dq), _merge_heads(dk), _merge_heads(dv)], axis=-1
        )
        dh = dqkv @ p[f"b{bi}.attn.w_qkv"].T
        dx_ln, dg1, db1 = _layernorm_bwd(dh, ln1c)
        dx = dx1 + dx_ln
        if need_param_grads:
            grads[f"b{bi}.ff.w2"] = r.reshape(-1, r.shape[-1]).T @ dff.reshape(-1, d)
            grads[f"b{bi}.ff.b2"] = dff.sum(axis=(0, 1))
            grads[f"b{bi}.ff.w1"] = h2.reshape(-1, d).T @ dz.reshape(-1, dz.shape[-1])
            grads[f"b{bi}.ff.b1"] = dz.sum(axis=(0, 1))
            grads[f"b{bi}.ln2.g"], grads[f"b{bi}.ln2.b"] = dg2, db2
            grads[f"b{bi}.attn.w_o"] = ctx.reshape(-1, d).T @ dao.reshape(-1, d)
            grads[f"b{bi}.attn.b_o"] = dao.sum(axis=(0, 1))
            grads[f"b{bi}.attn.w_qkv"] = h.reshape(-1, d).T @ dqkv.reshape(-1, 3 * d)
            grads[f"b{bi}.attn.b_qkv"] = dqkv.sum(axis=(0, 1))
            grads[f"b{bi}.ln1.g"], grads[f"b{bi}.ln1.b"] = dg1, db1

    return grads, dx


def embed_batch(model: ToyLM, seqs: list[MixedSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Pad to the batch max length; returns (emb (B,L,d), tokens (B,L))."""
    p = model.params
    dtype = model.dtype
    L = max(len(s) for s in seqs)
    B = len(seqs)
    tokens = np.full((B, L), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = s.tokens
    emb = p["tok_emb"][tokens] + p["pos_emb"][:L]
    for i, s in enumerate(seqs):
        for pos, vec in s.injected:
            emb[i, pos] = vec.astype(dtype) + p["pos_emb"][pos]
    return emb, tokens


def forward(model: ToyLM, seq: MixedSequence) -> np.ndarray:
    """Per-position next-token logits for one mixed sequence, shape (L, V)."""
    emb, _ = embed_batch(model, [seq])
    logits, _ = lm_forward_batch(model, emb, need_cache=False)
    return logits[0]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    s = logits - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax_xent(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross-entropy over rows and its gradient wrt logits."""
    logp = log_softmax(logits)
    n = np.arange(len(targets))
    loss = float(-logp[n, targets].sum())
    dlogits = np.exp(logp)
    dlogits[n, targets] -= 1.0
    return loss, dlogits


def batch_nll(model: ToyLM, items: list[tuple[MixedSequence, tuple[int, ...]]]) -> np.ndarray:
    """Sequence NLL of each (prompt, target); one batched forward pass."""
    seqs = []
    rows, cols, targs = [], [], []
    for i, (prompt, target) in enumerate(items):
        if len(target) == 0:
            raise ValueError("empty target")
        full = MixedSequence(tokens=prompt.tokens + tuple(target), injected=prompt.injected)
        seqs.append(full)
        base = len(prompt) - 1
        for j, t in enumerate(target):
            rows.append(i)
            cols.append(base + j)
            targs.append(t)
    emb, _ = embed_batch(model, seqs)
    logits, _ = lm_forward_batch(
        model, emb, loss_positions=(np.array(rows), np.array(cols)), need_cache=False
    )
    logp = log_softmax(logits)
    per_pos = -logp[np.arange(len(targs)), np.array(targs)]
    out = np.zeros(len(items), dtype=np.float64)
    np.add.at(out, np.array(rows), per_pos.astype(np.float64))
    return out


def sequence_nll(model: ToyLM, prompt: MixedSequence, target: tuple[int, ...] | list[int]) -> float:
    """-log P(target | prompt) under teacher forcing, summed over target tokens."""
    return float(batch_nll(model, [(prompt, tuple(target))])[0])


def generate(model: ToyLM, prompt: MixedSequence, max_tokens: int = 32) -> tuple[int, ...]:
    """Greedy argmax decoding until EOS or max_tokens; deterministic."""
    tokens = list(prompt.tokens)
    out: list[int] = []
    for _ in range(max_tokens):
        seq = MixedSequence(tokens=tuple(tokens), injected=prompt.injected)
        logits = forward(model, seq)
        nxt = int(np.argmax(logits[-1]))
        if nxt == EOS:
            break
        out.append(nxt)
        tokens.append(nxt)
        if len(tokens) >= model.config.context:
            break
    return tuple(out)


def score_choice(
    model: ToyLM,
    prompt: MixedSequence,
    choices: list[tuple[int, ...]],
) -> tuple[tuple[int, ...], list[float]]:
    """Pick the choice with the lowest length-normalized NLL.

    Ties break toward the lexicographically smaller token-id sequence.
    """
    if len(choices) < 2:
        raise ValueError("need at least two choices")
    nlls = batch_nll(model, [(prompt, tuple(c)) for c in choices])
    normed = [nll / len(c) for nll, c in zip(nlls, choices)]
    best = min(range(len(choices)), key=lambda i: (normed[i], tuple(choices[i])))
    return tuple(choices[best]), [float(x) for x in normed]


# ---------------------------------------------------------------------------
# pretraining

@dataclass
class LMPretrainConfig:
    epochs: int = 5
    batch_size: int = 32
    lr: float = 0.5
    momentum: float = 0.9
    grad_clip: float = 1.0
    seed: int = 0
    qa_epochs: int = 0  # extra passes over QA lines, loss on the answer span only
    qa_lr: float = 0.2
    qa_span: int = 2  # answer token + the end-of-sequence token


def lm_pretrain(
    corpus: list[list[int]],
    config: LMConfig,
    train: LMPretrainConfig,
    dtype=np.float32,
    qa_lines: list[list[int]] | None = None,
) -> tuple[ToyLM, list[float]]:
    """Train next-token prediction on the corpus, then freeze.

    When ``qa_lines`` are given, a second phase re-reads them with the loss
    restricted to the trailing answer span (answer-tuning); this concentrates
    signal that whole-line cross-entropy would dilute over long templates.
    Returns the frozen model and per-epoch mean losses (both phases).
    """
    if not corpus:
        raise ValueError("empty corpus")
    from .optim import MomentumSGD

    model = init_lm(config, train.seed, dtype=dtype)
    if model.frozen:
        raise RuntimeError("model already frozen")
    seqs = [
        np.array([BOS] + list(line) + [EOS], dtype=np.int64)
        for line in corpus
        if len(line) > 0
    ]
    if not seqs:
        raise ValueError("empty corpus")
    opt = MomentumSGD(model.params, lr=train.lr, momentum=train.momentum,
                      grad_clip=train.grad_clip)
    rng = make_rng(train.seed, "lm_pretrain")
    losses: list[float] = []
    for _ in range(train.epochs):
        order = rng.permutation(len(seqs))
        total, count = 0.0, 0
        for start in range(0, len(order), train.batch_size):
            idx = order[start : start + train.batch_size]
            batch = [seqs[i] for i in idx]
            loss_n, grads = _pretrain_step(model, batch)
            opt.step(model.params, grads)
            total += loss_n[0]
            count += loss_n[1]
        losses.append(total / max(count, 1))
    if qa_lines and train.qa_epochs > 0:
        qa_seqs = [np.array([BOS] + list(l) + [EOS], dtype=np.int64) for l in qa_lines]
        qa_opt = MomentumSGD(model.params, lr=train.qa_lr, momentum=train.momentum,
                             grad_clip=train.grad_clip)
        for _ in range(train.qa_epochs):
            order = rng.permutation(len(qa_seqs))
            total, count = 0.0, 0
            for start in range(0, len(order), train.batch_size):
                idx = order[start : start + train.batch_size]
                batch = [qa_seqs[i] for i in idx]
                loss_n, grads = _pretrain_step(model, batch, tail_span=train.qa_span)
                qa_opt.step(model.params, grads)
                total += loss_n[0]
                count += loss_n[1]
            losses.append(total / max(count, 1))
    model.freeze()
    return model, losses


def _pretrain_step(model: ToyLM, batch: list[np.ndarray], tail_span: int | None = None):
    dtype = model.dtype
    L = max(len(s) for s in batch)
    B = len(batch)
    tokens = np.full((B, L), PAD, dtype=np.int64)
    for i, s in enumerate(batch):
        tokens[i, : len(s)] = s
    emb = model.params["tok_emb"][tokens] + model.params["pos_emb"][:L]
    rows, cols, targs = [], [], []
    for i, s in enumerate(batch):
        lo = 0 if tail_span is None else max(0, len(s) - 1 - tail_span)
        for j in range(lo, len(s) - 1):
            rows.append(i)
            cols.append(j)
            targs.append(int(s[j + 1]))
    rows_a, cols_a = np.array(rows), np.array(cols)
    logits, cache = lm_forward_batch(model, emb, loss_positions=(rows_a, cols_a))
    loss, dlogits = softmax_xent(logits, np.array(targs))
    n = len(targs)
    dlogits = (dlogits / n).astype(dtype)
    grads, demb = lm_backward_batch(model, cache, dlogits)
    # embedding-table grads: scatter rows back, position table by column
    dtok = np.zeros_like(model.params["tok_emb"])
    np.add.at(dtok, tokens.ravel(), demb.reshape(-1, demb.shape[-1]))
    dpos = np.zeros_like(model.params["pos_emb"])
    dpos[:L] = demb.sum(axis=0)
    grads["tok_emb"] = dtok
    grads["pos_emb"] = dpos
    return (loss / n, 1), grads
