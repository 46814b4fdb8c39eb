"""Four-layer slot scorer: title encoder, intention gate, calendar-context
convolutions and the softmax output head.

Layout of one forward pass (batch of scheduling instances):

    titles  -> Bi-LSTM over [word emb | char CNN]      -> t'   [B, T]
    t', duration, user emb -> highway                  -> I    [B, T+U+1]
    context events -> channel tensor [T+U+S, 7, 24]
                   -> two conv stages + max pool       -> C'   [B, conv2 total]
    [C' | I] -> highway -> affine -> softmax           -> p    [B, 168]

Every component can be switched off; disabled components contribute
zero-filled channels so downstream shapes never change, and their
parameters are simply never created.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import ics
from . import layers as ly
from .autograd import Tensor
from .ics import SchedulingInstance

__all__ = [
    "NesaConfig", "NesaParams", "encode_title", "intention",
    "build_context_tensor", "encode_context", "forward", "forward_batch",
    "loss", "param_count", "predict_topk", "save_checkpoint",
    "load_checkpoint", "build_vocab", "build_users", "TINY_CONFIG",
    "DESK_CONFIG",
]


@dataclass(frozen=True)
class NesaConfig:
    """Dimensions, filter banks and ablation switches."""

    days: int = 7
    hours: int = 24
    hidden: int = 100
    user_dim: int = 30
    slot_dim: int = 30
    char_dim: int = 30
    word_dim: int = 50
    char_banks: tuple[tuple[int, int], ...] = ly.DEFAULT_CHAR_BANKS
    conv1: tuple[tuple[int, int], ...] = ((1, 100), (3, 200), (5, 300))
    conv2: tuple[tuple[int, int], ...] = ((1, 50), (3, 100), (5, 150))
    learning_rate: float = 0.001
    grad_clip: float = 5.0
    dropout: float = 0.5
    user_mask_p: float = 0.05
    use_context: bool = True
    use_intention: bool = True
    use_word_emb: bool = True
    use_char_emb: bool = True
    use_duration: bool = True
    use_user_emb: bool = True
    share_context_encoder: bool = False

    @property
    def title_dim(self) -> int:
        return 2 * self.hidden

    @property
    def intention_dim(self) -> int:
        return self.title_dim + self.user_dim + 1

    @property
    def char_out_dim(self) -> int:
        return sum(count for _, count in self.char_banks)

    @property
    def context_channels(self) -> int:
        return self.title_dim + self.user_dim + self.slot_dim

    @property
    def conv1_out(self) -> int:
        return sum(count for _, count in self.conv1)

    @property
    def conv2_out(self) -> int:
        return sum(count for _, count in self.conv2)

    @property
    def output_in_dim(self) -> int:
        return self.conv2_out + self.intention_dim

    @property
    def num_slots(self) -> int:
        return self.days * self.hours

    def with_ablation(self, flags: Sequence[str]) -> "NesaConfig":
        """Copy with the named use_* switches turned off."""
        known = {"context", "intention", "word_emb", "char_emb", "duration",
                 "user_emb"}
        updates = {}
        for f in flags:
            name = f.strip().removeprefix("use_")
            if name not in known:
                raise ValueError(f"unknown ablation flag: {f!r}")
            updates[f"use_{name}"] = False
        return replace(self, **updates)


#: Scaled-down shape for fast tests: T = 8, two channels each for user/slot.
TINY_CONFIG = NesaConfig(
    hidden=4, user_dim=2, slot_dim=2, char_dim=3, word_dim=4,
    char_banks=((2, 2), (3, 2)),
    conv1=((1, 1), (3, 1), (5, 1)),
    conv2=((1, 1), (3, 1), (5, 1)),
)

#: Small enough to train on a laptop CPU in minutes (T = 64, ~170k params)
#: while keeping every architectural component of the full model.
DESK_CONFIG = NesaConfig(
    hidden=32, user_dim=8, slot_dim=8, char_dim=8, word_dim=16,
    char_banks=((1, 4), (2, 4), (3, 8)),
    conv1=((1, 8), (3, 16), (5, 16)),
    conv2=((1, 4), (3, 8), (5, 8)),
)


@dataclass
class ConvUnit:
    """One parallel convolution path: filters, bias, batch-norm."""

    kernel: int
    filters: Tensor
    bias: Tensor
    gamma: Tensor
    beta: Tensor
    bn: ag.BatchNormState

    @classmethod
    def create(cls, kernel: int, in_ch: int, out_ch: int,
               rng: np.random.Generator, dtype=np.float32) -> "ConvUnit":
        fan_in = in_ch * kernel * kernel
        return cls(
            kernel=kernel,
            filters=ly.uniform_init(rng, (out_ch, in_ch, kernel, kernel),
                                    fan_in, dtype),
            bias=Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True),
            gamma=Tensor(np.ones(out_ch, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True),
            bn=ag.BatchNormState.create(out_ch, dtype=dtype))

    def named(self, prefix: str) -> dict[str, Tensor]:
        p = f"{prefix}.k{self.kernel}"
        return {f"{p}.F": self.filters, f"{p}.b": self.bias,
                f"{p}.gamma": self.gamma, f"{p}.beta": self.beta}

    def buffers(self, prefix: str) -> dict[str, np.ndarray]:
        p = f"{prefix}.k{self.kernel}"
        return {f"{p}.running_mean": self.bn.running_mean,
                f"{p}.running_var": self.bn.running_var}


def build_vocab(instances: Sequence[SchedulingInstance]) -> list[str]:
    """Sorted unique tokens over target and context titles."""
    words = set()
    for inst in instances:
        words.update(ly.tokenize(inst.target_title))
        for e in inst.context:
            words.update(ly.tokenize(e.title))
    return sorted(words)


def build_users(instances: Sequence[SchedulingInstance]) -> list[str]:
    users = {inst.target_user for inst in instances}
    for inst in instances:
        users.update(e.user_id for e in inst.context)
    return sorted(users)


@dataclass
class NesaParams:
    """All model state: tables, encoders, conv stacks, heads, vocab maps."""

    config: NesaConfig
    vocab: dict[str, int]
    users: dict[str, int]
    word_table: Tensor | None
    word_frozen: bool
    user_table: Tensor | None
    slot_table: Tensor | None
    title_lstm: ly.BiLstmParams
    title_char: ly.CharCnnParams | None
    ctx_lstm: ly.BiLstmParams | None
    ctx_char: ly.CharCnnParams | None
    intent_hw: ly.HighwayParams | None
    conv1: list[ConvUnit]
    conv2: list[ConvUnit]
    out_hw: ly.HighwayParams
    out_W: Tensor
    out_b: Tensor

    @classmethod
    def create(cls, config: NesaConfig, vocab: Sequence[str],
               users: Sequence[str], rng: np.random.Generator | None = None,
               dtype=np.float32,
               word_matrix: np.ndarray | None = None) -> "NesaParams":
        """Random initialization; ``word_matrix`` (rows aligned with vocab)
        installs frozen pre-trained word embeddings."""
        rng = rng if rng is not None else np.random.default_rng()
        cfg = config
        if word_matrix is not None:
            if word_matrix.shape != (len(vocab), cfg.word_dim):
                raise ag.ShapeMismatch(
                    f"embedding matrix {word_matrix.shape} does not match "
                    f"vocab {len(vocab)} x dim {cfg.word_dim}")

        word_table = None
        word_frozen = False
        if cfg.use_word_emb:
            if word_matrix is not None:
                word_table = Tensor(word_matrix.astype(dtype))
                word_frozen = True
            else:
                word_table = ly.uniform_init(rng, (len(vocab), cfg.word_dim),
                                             cfg.word_dim, dtype)

        user_table = (ly.uniform_init(rng, (len(users) + 1, cfg.user_dim),
                                      cfg.user_dim, dtype)
                      if cfg.use_user_emb else None)

        feat_dim = cfg.word_dim + cfg.char_out_dim
        title_lstm = ly.BiLstmParams.create(feat_dim, cfg.hidden, 2,
                                            cfg.dropout, rng, dtype)
        title_char = (ly.CharCnnParams.create(cfg.char_dim, cfg.char_banks,
                                              rng, dtype)
                      if cfg.use_char_emb else None)

        slot_table = None
        ctx_lstm = ctx_char = None
        conv1: list[ConvUnit] = []
        conv2: list[ConvUnit] = []
        if cfg.use_context:
            slot_table = ly.uniform_init(rng, (cfg.num_slots, cfg.slot_dim),
                                         cfg.slot_dim, dtype)
            if cfg.share_context_encoder:
                ctx_lstm, ctx_char = title_lstm, title_char
            else:
                ctx_lstm = ly.BiLstmParams.create(feat_dim, cfg.hidden, 2,
                                                  cfg.dropout, rng, dtype)
                ctx_char = (ly.CharCnnParams.create(cfg.char_dim, cfg.char_banks,
                                                    rng, dtype)
                            if cfg.use_char_emb else None)
            in_ch = cfg.context_channels
            conv1 = [ConvUnit.create(k, in_ch, n, rng, dtype)
                     for k, n in cfg.conv1]
            conv2 = [ConvUnit.create(k, cfg.conv1_out, n, rng, dtype)
                     for k, n in cfg.conv2]

        intent_hw = (ly.HighwayParams.create(cfg.intention_dim, rng, dtype)
                     if cfg.use_intention else None)
        out_hw = ly.HighwayParams.create(cfg.output_in_dim, rng, dtype)
        out_W = ly.uniform_init(rng, (cfg.output_in_dim, cfg.num_slots),
                                cfg.output_in_dim, dtype)
        out_b = Tensor(np.zeros(cfg.num_slots, dtype=dtype), requires_grad=True)

        return cls(config=cfg, vocab={w: i for i, w in enumerate(vocab)},
                   users={u: i for i, u in enumerate(users)},
                   word_table=word_table, word_frozen=word_frozen,
                   user_table=user_table, slot_table=slot_table,
                   title_lstm=title_lstm, title_char=title_char,
                   ctx_lstm=ctx_lstm, ctx_char=ctx_char, intent_hw=intent_hw,
                   conv1=conv1, conv2=conv2, out_hw=out_hw,
                   out_W=out_W, out_b=out_b)

    # -- naming ------------------------------------------------------------

    def named_tensors(self) -> dict[str, Tensor]:
        cfg = self.config
        out: dict[str, Tensor] = {}
        if self.word_table is not None:
            out["emb.word"] = self.word_table
        if self.user_table is not None:
            out["emb.user"] = self.user_table
        if self.slot_table is not None:
            out["emb.slot"] = self.slot_table
        out.update(self.title_lstm.named("title"))
        if self.title_char is not None:
            out.update(self.title_char.named("char"))
        if cfg.use_context and not cfg.share_context_encoder:
            out.update(self.ctx_lstm.named("ctx_title"))
            if self.ctx_char is not None:
                out.update(self.ctx_char.named("ctx_char"))
        if self.intent_hw is not None:
            out.update(self.intent_hw.named("highway.intent"))
        for unit in self.conv1:
            out.update(unit.named("conv1"))
        for unit in self.conv2:
            out.update(unit.named("conv2"))
        out.update(self.out_hw.named("highway.out"))
        out["out.W"] = self.out_W
        out["out.b"] = self.out_b
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for unit in self.conv1:
            out.update(unit.buffers("conv1"))
        for unit in self.conv2:
            out.update(unit.buffers("conv2"))
        return out

    def trainable(self) -> list[tuple[str, Tensor]]:
        """Deterministically ordered optimizer targets; frozen tables excluded."""
        out = []
        for name, t in sorted(self.named_tensors().items()):
            if name == "emb.word" and self.word_frozen:
                continue
            out.append((name, t))
        return out

    # -- lookups -----------------------------------------------------------

    def word_rows(self, tokens: Sequence[str]) -> np.ndarray:
        """Vocabulary rows; out-of-vocabulary words map to the zero row."""
        return np.array([self.vocab.get(t, -1) for t in tokens], dtype=np.int64)

    def user_rows(self, user_ids: Sequence[str], mode: str = "eval",
                  rng: np.random.Generator | None = None) -> np.ndarray:
        """Embedding rows; unseen ids use the shared unknown row, and in
        train mode each id flips to unknown with probability user_mask_p
        so that row keeps learning."""
        unk = len(self.users)
        rows = np.array([self.users.get(u, unk) for u in user_ids],
                        dtype=np.int64)
        if mode == "train" and self.config.user_mask_p > 0 and rng is not None:
            masked = rng.random(len(rows)) < self.config.user_mask_p
            rows[masked] = unk
        return rows


def param_count(params: NesaParams) -> int:
    """Trainable scalars (frozen word embeddings and running stats excluded)."""
    return sum(t.size for _, t in params.trainable())


# --------------------------------------------------------------------------
# encoders

def _encode_titles(titles: Sequence[str], lstm: ly.BiLstmParams,
                   char: ly.CharCnnParams | None, params: NesaParams,
                   mode: str, rng: np.random.Generator) -> Tensor:
    """Titles -> [len(titles), T] via the given Bi-LSTM/char-CNN pair."""
    cfg = params.config
    token_lists = [ly.tokenize(t) for t in titles]
    flat_words = [w for toks in token_lists for w in toks]
    lengths = [len(toks) for toks in token_lists]

    parts = []
    if params.word_table is not None:
        parts.append(ag.embedding_lookup(params.word_table,
                                         params.word_rows(flat_words)))
    else:
        parts.append(Tensor(np.zeros((len(flat_words), cfg.word_dim),
                                     dtype=_dtype_of(params))))
    if char is not None:
        parts.append(ly.char_cnn_words(flat_words, char))
    else:
        parts.append(Tensor(np.zeros((len(flat_words), cfg.char_out_dim),
                                     dtype=_dtype_of(params))))
    feats = ag.concat(parts, axis=1)

    # pack ragged word rows into [B, L_max, D]; -1 rows stay zero
    l_max = max(lengths)
    padded_idx = np.full((len(titles), l_max), -1, dtype=np.int64)
    offset = 0
    for i, n in enumerate(lengths):
        padded_idx[i, :n] = np.arange(offset, offset + n)
        offset += n
    padded = ag.embedding_lookup(feats, padded_idx)
    return ly.bilstm_encode_batch(padded, lengths, lstm, mode, rng)


def _dtype_of(params: NesaParams):
    return params.out_W.data.dtype


def encode_title(title: str, params: NesaParams, mode: str = "eval",
                 rng: np.random.Generator | None = None) -> Tensor:
    """Title representation t' of dimension T."""
    rng = rng if rng is not None else np.random.default_rng()
    out = _encode_titles([title], params.title_lstm, params.title_char,
                         params, mode, rng)
    return ag.reshape(out, (params.config.title_dim,))


def _intention_batch(t_prime: Tensor, durations: np.ndarray,
                     user_rows: np.ndarray, params: NesaParams,
                     mode: str, rng: np.random.Generator) -> Tensor:
    cfg = params.config
    dtype = _dtype_of(params)
    b = t_prime.data.shape[0]
    if not cfg.use_intention:
        # keep the title representation, zero the rest, skip the highway
        zeros = Tensor(np.zeros((b, cfg.user_dim + 1), dtype=dtype))
        return ag.concat([t_prime, zeros], axis=1)
    if cfg.use_duration:
        d = Tensor(durations.astype(dtype).reshape(b, 1))
    else:
        d = Tensor(np.zeros((b, 1), dtype=dtype))
    if params.user_table is not None:
        e_u = ag.embedding_lookup(params.user_table, user_rows)
    else:
        e_u = Tensor(np.zeros((b, cfg.user_dim), dtype=dtype))
    x = ag.concat([t_prime, d, e_u], axis=1)
    return ly.highway(x, params.intent_hw)


def intention(t_prime: Tensor, duration_scaled: float, user_id: str,
              params: NesaParams, mode: str = "eval",
              rng: np.random.Generator | None = None) -> Tensor:
    """Intention vector I of dimension T + U + 1 for one event."""
    rng = rng if rng is not None else np.random.default_rng()
    rows = params.user_rows([user_id], mode, rng)
    t2 = ag.reshape(t_prime, (1, params.config.title_dim))
    out = _intention_batch(t2, np.array([duration_scaled]), rows, params,
                           mode, rng)
    return ag.reshape(out, (params.config.intention_dim,))


def _coverage_masks(instance: SchedulingInstance,
                    num_slots: int) -> list[np.ndarray]:
    """One 0/1 slot mask per context event; later events claim contested
    slots, so the masks are disjoint."""
    masks = [np.zeros(num_slots) for _ in instance.context]
    claimed = np.zeros(num_slots, dtype=bool)
    for k in range(len(instance.context) - 1, -1, -1):
        e = instance.context[k]
        span = ics.covered_slots(ics.slot_of(e.start, instance.tz),
                                 e.duration_min)
        for s in span:
            if not claimed[s]:
                masks[k][s] = 1.0
                claimed[s] = True
    return masks


def _context_tensor_batch(instances: Sequence[SchedulingInstance],
                          user_rows: np.ndarray, params: NesaParams,
                          mode: str, rng: np.random.Generator) -> Tensor:
    cfg = params.config
    dtype = _dtype_of(params)
    b = len(instances)
    slots = cfg.num_slots

    all_titles = [e.title for inst in instances for e in inst.context]
    counts = [len(inst.context) for inst in instances]
    if all_titles:
        ctx_vecs = _encode_titles(all_titles, params.ctx_lstm, params.ctx_char,
                                  params, mode, rng)
    else:
        ctx_vecs = None

    rows_of = np.cumsum([0] + counts)
    title_blocks = []
    for i, inst in enumerate(instances):
        if counts[i] == 0:
            title_blocks.append(
                Tensor(np.zeros((1, cfg.title_dim, slots), dtype=dtype)))
            continue
        vecs = ag.embedding_lookup(
            ctx_vecs, np.arange(rows_of[i], rows_of[i + 1]))
        cover = np.stack(_coverage_masks(inst, slots)).astype(dtype)
        block = ag.matmul(ag.transpose(vecs, (1, 0)), Tensor(cover))
        title_blocks.append(ag.reshape(block, (1, cfg.title_dim, slots)))
    title_ch = ag.concat(title_blocks, axis=0)

    if params.user_table is not None:
        e_u = ag.embedding_lookup(params.user_table, user_rows)
        user_ch = ag.mul(ag.reshape(e_u, (b, cfg.user_dim, 1)),
                         Tensor(np.ones((1, 1, slots), dtype=dtype)))
    else:
        user_ch = Tensor(np.zeros((b, cfg.user_dim, slots), dtype=dtype))

    slot_ch = ag.mul(ag.reshape(ag.transpose(params.slot_table, (1, 0)),
                                (1, cfg.slot_dim, slots)),
                     Tensor(np.ones((b, 1, 1), dtype=dtype)))

    stacked = ag.concat([title_ch, user_ch, slot_ch], axis=1)
    return ag.reshape(stacked, (b, cfg.context_channels, cfg.days, cfg.hours))


def build_context_tensor(instance: SchedulingInstance, params: NesaParams,
                         mode: str = "eval",
                         rng: np.random.Generator | None = None) -> Tensor:
    """Channel tensor [T+U+S, days, hours] for one instance."""
    rng = rng if rng is not None else np.random.default_rng()
    rows = params.user_rows([instance.target_user], mode, rng)
    out = _context_tensor_batch([instance], rows, params, mode, rng)
    cfg = params.config
    return ag.reshape(out, (cfg.context_channels, cfg.days, cfg.hours))


def _conv_stage(x: Tensor, units: list[ConvUnit], mode: str,
                final_relu: bool) -> Tensor:
    outs = []
    for unit in units:
        y = ag.conv2d_same(x, unit.filters, unit.bias)
        y = ag.batchnorm2d(y, unit.gamma, unit.beta, unit.bn, mode)
        if final_relu:
            y = ag.relu(y)
        outs.append(y)
    return ag.concat(outs, axis=1)


def _encode_context_batch(ct: Tensor, params: NesaParams, mode: str) -> Tensor:
    h = _conv_stage(ct, params.conv1, mode, final_relu=True)
    h = _conv_stage(h, params.conv2, mode, final_relu=False)
    return ag.max_over_time(h)


def encode_context(ct: Tensor, params: NesaParams, mode: str = "eval") -> Tensor:
    """Context tensor -> vector of dimension conv2 total (default 300)."""
    squeeze = ct.data.ndim == 3
    if squeeze:
        ct = ag.reshape(ct, (1,) + ct.data.shape)
    out = _encode_context_batch(ct, params, mode)
    return ag.reshape(out, (params.config.conv2_out,)) if squeeze else out


# --------------------------------------------------------------------------
# end to end

def forward_batch(instances: Sequence[SchedulingInstance], params: NesaParams,
                  mode: str = "eval",
                  rng: np.random.Generator | None = None) -> Tensor:
    """Probability rows [B, 168], one per instance."""
    cfg = params.config
    rng = rng if rng is not None else np.random.default_rng()
    dtype = _dtype_of(params)
    b = len(instances)

    t_prime = _encode_titles([i.target_title for i in instances],
                             params.title_lstm, params.title_char,
                             params, mode, rng)
    durations = np.array([i.target_duration_scaled for i in instances])
    user_rows = params.user_rows([i.target_user for i in instances], mode, rng)
    intent = _intention_batch(t_prime, durations, user_rows, params, mode, rng)

    if cfg.use_context:
        ct = _context_tensor_batch(instances, user_rows, params, mode, rng)
        ctx_vec = _encode_context_batch(ct, params, mode)
    else:
        ctx_vec = Tensor(np.zeros((b, cfg.conv2_out), dtype=dtype))

    x = ag.concat([ctx_vec, intent], axis=1)
    x = ag.dropout(x, cfg.dropout, rng, mode)
    z = ly.highway(x, params.out_hw)
    logits = ag.add(ag.matmul(z, params.out_W), params.out_b)
    return ag.softmax(logits, axis=-1)


def forward(instance: SchedulingInstance, params: NesaParams,
            mode: str = "eval",
            rng: np.random.Generator | None = None) -> Tensor:
    """Probability vector over the 168 slots for one instance."""
    out = forward_batch([instance], params, mode, rng)
    return ag.reshape(out, (params.config.num_slots,))


def loss(batch: Sequence[SchedulingInstance], params: NesaParams,
         mode: str = "train",
         rng: np.random.Generator | None = None) -> Tensor:
    """Mean negative log probability of the answer slots."""
    if not batch:
        raise ValueError("empty batch")
    probs = forward_batch(batch, params, mode, rng)
    return ag.cross_entropy(probs, [i.answer for i in batch])


def predict_topk(instance: SchedulingInstance, params: NesaParams,
                 k: int) -> list[tuple[int, float]]:
    """Top-k (slot, probability), ties broken by lower slot index."""
    if not 1 <= k <= params.config.num_slots:
        raise ValueError(f"k out of range: {k}")
    p = forward(instance, params, mode="eval").data
    order = np.argsort(-p, kind="stable")
    return [(int(s), float(p[s])) for s in order[:k]]


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, params: NesaParams) -> None:
    """Tensor container at ``path`` plus a JSON metadata sidecar
    (config, vocabulary, user table, alphabet) at ``path + ".json"``."""
    tensors: dict[str, np.ndarray | Tensor] = dict(params.named_tensors())
    tensors.update(params.buffers())
    ag.save_tensors(path, tensors)
    vocab = [w for w, _ in sorted(params.vocab.items(), key=lambda kv: kv[1])]
    users = [u for u, _ in sorted(params.users.items(), key=lambda kv: kv[1])]
    meta = {
        "format": "nesa-checkpoint",
        "version": 1,
        "kind": "nesa",
        "config": asdict(params.config),
        "vocab": vocab,
        "users": users,
        "alphabet": "ascii-printable+pad+unk",
        "word_frozen": params.word_frozen,
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump(meta, f, ensure_ascii=False, indent=1)


def _config_from_meta(raw: dict) -> NesaConfig:
    def pairs(v):
        return tuple((int(a), int(b)) for a, b in v)

    raw = dict(raw)
    for key in ("char_banks", "conv1", "conv2"):
        raw[key] = pairs(raw[key])
    return NesaConfig(**raw)


def load_checkpoint(path) -> NesaParams:
    """Rebuild a model from container + sidecar; shapes must match exactly."""
    with open(str(path) + ".json", "r", encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("kind") != "nesa":
        raise ValueError(f"checkpoint kind {meta.get('kind')!r} is not a model")
    config = _config_from_meta(meta["config"])
    stored = ag.load_tensors(path)

    word_matrix = None
    if meta["word_frozen"]:
        word_matrix = stored["emb.word"]
    params = NesaParams.create(config, meta["vocab"], meta["users"],
                               rng=np.random.default_rng(0),
                               word_matrix=word_matrix)

    expected = dict(params.named_tensors())
    buffers = params.buffers()
    known = set(expected) | set(buffers)
    if set(stored) != known:
        missing = sorted(known - set(stored))
        extra = sorted(set(stored) - known)
        raise ValueError(f"checkpoint mismatch: missing {missing[:4]}, "
                         f"unexpected {extra[:4]}")
    for name, tensor in expected.items():
        if tensor.data.shape != stored[name].shape:
            raise ValueError(f"shape mismatch for {name}: "
                             f"{tensor.data.shape} vs {stored[name].shape}")
        tensor.data = stored[name].astype(tensor.data.dtype)
    for name, arr in buffers.items():
        arr[:] = stored[name]
    return params
