"""Recurrent, convolutional and gating layers built on the tensor engine.

Everything here is batched: sequences come in as padded index arrays with
explicit lengths, and padding can never change a result.  Single-item
helpers wrap the batched paths.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor

__all__ = [
    "EmptySequence", "uniform_init", "tokenize", "encode_chars",
    "ALPHABET_SIZE", "CHAR_PAD", "CHAR_UNK", "LstmCellParams", "BiLstmParams",
    "lstm_cell", "bilstm_encode", "bilstm_encode_batch", "CharCnnParams",
    "char_cnn_word", "char_cnn_words", "HighwayParams", "highway",
    "DEFAULT_CHAR_BANKS",
]


class EmptySequence(ValueError):
    """An encoder received a zero-length sequence."""


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...],
                 fan_in: int, dtype=np.float32) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                  requires_grad=True)


_TOKEN = re.compile(r"\w+|[^\w\s]")

UNK_TOKEN = "<unk>"


def tokenize(title: str) -> list[str]:
    """Lowercase words and punctuation marks; empty titles become one
    unknown token so every title has at least one step."""
    tokens = _TOKEN.findall(title.lower())
    return tokens if tokens else [UNK_TOKEN]


# character vocabulary: 0 = padding, 1 = unknown, then printable ASCII
CHAR_PAD = 0
CHAR_UNK = 1
_CHAR_BASE = 32
_CHAR_TOP = 127
ALPHABET_SIZE = 2 + (_CHAR_TOP - _CHAR_BASE + 1)  # 98


def encode_chars(word: str) -> list[int]:
    out = []
    for ch in word:
        o = ord(ch)
        out.append(2 + o - _CHAR_BASE if _CHAR_BASE <= o <= _CHAR_TOP else CHAR_UNK)
    return out if out else [CHAR_UNK]


# --------------------------------------------------------------------------
# LSTM

@dataclass
class LstmCellParams:
    """One direction, one layer: four gates with input and state matrices."""

    W_i1: Tensor; W_i2: Tensor; b_i: Tensor
    W_f1: Tensor; W_f2: Tensor; b_f: Tensor
    W_g1: Tensor; W_g2: Tensor; b_g: Tensor
    W_o1: Tensor; W_o2: Tensor; b_o: Tensor

    @classmethod
    def create(cls, input_dim: int, hidden: int, rng: np.random.Generator,
               dtype=np.float32) -> "LstmCellParams":
        def w1():
            return uniform_init(rng, (input_dim, hidden), input_dim, dtype)

        def w2():
            return uniform_init(rng, (hidden, hidden), hidden, dtype)

        def b(value=0.0):
            return Tensor(np.full(hidden, value, dtype=dtype), requires_grad=True)

        # forget bias starts at +1 so early training keeps cell state
        return cls(W_i1=w1(), W_i2=w2(), b_i=b(),
                   W_f1=w1(), W_f2=w2(), b_f=b(1.0),
                   W_g1=w1(), W_g2=w2(), b_g=b(),
                   W_o1=w1(), W_o2=w2(), b_o=b())

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{name}": getattr(self, name)
                for name in ("W_i1", "W_i2", "b_i", "W_f1", "W_f2", "b_f",
                             "W_g1", "W_g2", "b_g", "W_o1", "W_o2", "b_o")}


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              p: LstmCellParams) -> tuple[Tensor, Tensor]:
    """One step: gates i, f, o gate candidate g into the cell state."""
    i = ag.sigmoid(ag.add(ag.add(ag.matmul(x, p.W_i1), ag.matmul(h_prev, p.W_i2)), p.b_i))
    f = ag.sigmoid(ag.add(ag.add(ag.matmul(x, p.W_f1), ag.matmul(h_prev, p.W_f2)), p.b_f))
    g = ag.tanh(ag.add(ag.add(ag.matmul(x, p.W_g1), ag.matmul(h_prev, p.W_g2)), p.b_g))
    o = ag.sigmoid(ag.add(ag.add(ag.matmul(x, p.W_o1), ag.matmul(h_prev, p.W_o2)), p.b_o))
    c = ag.add(ag.mul(f, c_prev), ag.mul(i, g))
    h = ag.mul(o, ag.tanh(c))
    return h, c


@dataclass
class BiLstmParams:
    """Stacked forward and backward cells plus the inter-layer dropout rate."""

    fw: list[LstmCellParams]
    bw: list[LstmCellParams]
    hidden: int
    dropout: float = 0.5

    @classmethod
    def create(cls, input_dim: int, hidden: int = 100, num_layers: int = 2,
               dropout: float = 0.5, rng: np.random.Generator | None = None,
               dtype=np.float32) -> "BiLstmParams":
        rng = rng if rng is not None else np.random.default_rng()
        dims = [input_dim] + [hidden] * (num_layers - 1)
        return cls(fw=[LstmCellParams.create(d, hidden, rng, dtype) for d in dims],
                   bw=[LstmCellParams.create(d, hidden, rng, dtype) for d in dims],
                   hidden=hidden, dropout=dropout)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for tag, stack in (("fw", self.fw), ("bw", self.bw)):
            for layer, cell in enumerate(stack):
                out.update(cell.named(f"{prefix}.{tag}.l{layer}"))
        return out


def _run_direction(steps: list[Tensor], masks: list[np.ndarray],
                   stack: list[LstmCellParams], hidden: int, dropout: float,
                   mode: str, rng: np.random.Generator) -> Tensor:
    """Run a stacked LSTM over already-ordered steps; masked steps carry
    state through unchanged.  Returns the final hidden state [B, hidden]."""
    batch = steps[0].data.shape[0]
    dtype = steps[0].data.dtype
    final = None
    for layer, cell in enumerate(stack):
        if layer > 0:
            steps = [ag.dropout(s, dropout, rng, mode) for s in steps]
        h = Tensor(np.zeros((batch, hidden), dtype=dtype))
        c = Tensor(np.zeros((batch, hidden), dtype=dtype))
        outs = []
        for x, m in zip(steps, masks):
            h_new, c_new = lstm_cell(x, h, c, cell)
            keep = Tensor(m.astype(dtype))
            drop = Tensor((1.0 - m).astype(dtype))
            h = ag.add(ag.mul(h_new, keep), ag.mul(h, drop))
            c = ag.add(ag.mul(c_new, keep), ag.mul(c, drop))
            outs.append(h)
        steps = outs
        final = h
    return final


def bilstm_encode_batch(seq: Tensor, lengths: Sequence[int], p: BiLstmParams,
                        mode: str = "eval",
                        rng: np.random.Generator | None = None) -> Tensor:
    """Encode padded sequences [B, L, d] into [B, 2*hidden].

    The forward stack reads each sequence left to right, the backward
    stack right to left; the two final states are concatenated and the
    joint output gets dropout in train mode.
    """
    b, length, dim = seq.data.shape
    if length == 0 or min(lengths) == 0:
        raise EmptySequence("cannot encode a zero-length sequence")
    rng = rng if rng is not None else np.random.default_rng()
    lengths = np.asarray(lengths)

    steps = [ag.reshape(ag.slice_axis(seq, 1, t, t + 1), (b, dim))
             for t in range(length)]
    masks = [(lengths > t).astype(np.float64)[:, None] for t in range(length)]

    h_fw = _run_direction(steps, masks, p.fw, p.hidden, p.dropout, mode, rng)
    h_bw = _run_direction(steps[::-1], masks[::-1], p.bw, p.hidden, p.dropout,
                          mode, rng)
    out = ag.concat([h_fw, h_bw], axis=1)
    return ag.dropout(out, p.dropout, rng, mode)


def bilstm_encode(inputs: Tensor, p: BiLstmParams, mode: str = "eval",
                  rng: np.random.Generator | None = None) -> Tensor:
    """Encode one sequence [L, d] into a vector [2*hidden]."""
    if inputs.data.ndim != 2:
        raise ag.ShapeMismatch(f"expected [L, d] sequence, got {inputs.data.shape}")
    length = inputs.data.shape[0]
    if length == 0:
        raise EmptySequence("cannot encode a zero-length sequence")
    batched = ag.reshape(inputs, (1,) + inputs.data.shape)
    return ag.reshape(bilstm_encode_batch(batched, [length], p, mode, rng),
                      (2 * p.hidden,))


# --------------------------------------------------------------------------
# character CNN

#: (filter width, filter count) pairs; 525 features total.
DEFAULT_CHAR_BANKS: tuple[tuple[int, int], ...] = (
    (1, 25), (2, 50), (3, 75), (4, 100), (5, 125), (6, 150))


@dataclass
class CharCnnParams:
    """Character embedding table plus width-indexed filter banks."""

    table: Tensor
    banks: list[tuple[int, Tensor, Tensor]]  # (width, F [count, width*C], b)

    @classmethod
    def create(cls, char_dim: int = 30,
               banks: Sequence[tuple[int, int]] = DEFAULT_CHAR_BANKS,
               rng: np.random.Generator | None = None,
               dtype=np.float32) -> "CharCnnParams":
        rng = rng if rng is not None else np.random.default_rng()
        table = uniform_init(rng, (ALPHABET_SIZE, char_dim), char_dim, dtype)
        built = []
        for width, count in banks:
            f = uniform_init(rng, (count, width * char_dim), width * char_dim, dtype)
            b = Tensor(np.zeros(count, dtype=dtype), requires_grad=True)
            built.append((width, f, b))
        return cls(table=table, banks=built)

    @property
    def out_dim(self) -> int:
        return sum(f.data.shape[0] for _, f, _ in self.banks)

    @property
    def char_dim(self) -> int:
        return self.table.data.shape[1]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.table": self.table}
        for width, f, b in self.banks:
            out[f"{prefix}.bank{width}.F"] = f
            out[f"{prefix}.bank{width}.b"] = b
        return out


def char_cnn_words(words: Sequence[str], p: CharCnnParams) -> Tensor:
    """Feature vectors [len(words), out_dim] from per-word filter maxima.

    Words are padded to a common length; only windows that start inside
    the real word count, so padding never affects the result."""
    encoded = [encode_chars(w) for w in words]
    max_width = max(width for width, _, _ in p.banks)
    true_lens = np.array([len(e) for e in encoded])
    length = max(int(true_lens.max()), max_width)
    n = len(words)
    idx = np.full((n, length), CHAR_PAD, dtype=np.int64)
    for row, chars in enumerate(encoded):
        idx[row, :len(chars)] = chars

    dtype = p.table.data.dtype
    pieces = []
    for width, filt, bias in p.banks:
        positions = length - width + 1
        windows = np.lib.stride_tricks.sliding_window_view(idx, width, axis=1)
        emb = ag.embedding_lookup(p.table, windows.reshape(-1))
        flat = ag.reshape(emb, (n * positions, width * p.char_dim))
        scores = ag.tanh(ag.add(ag.matmul(flat, ag.transpose(filt, (1, 0))), bias))
        count = filt.data.shape[0]
        maps = ag.reshape(ag.transpose(ag.reshape(scores, (n, positions, count)),
                                       (0, 2, 1)), (n, count, 1, positions))
        # windows starting past the word's last character sink below tanh range
        valid = np.maximum(true_lens - width + 1, 1)
        gate = np.where(np.arange(positions)[None, :] < valid[:, None], 0.0, -3.0)
        maps = ag.add(maps, Tensor(gate.astype(dtype).reshape(n, 1, 1, positions)))
        pieces.append(ag.max_over_time(maps))
    return ag.concat(pieces, axis=1)


def char_cnn_word(word: str, p: CharCnnParams) -> Tensor:
    """Feature vector [out_dim] for a single word."""
    return ag.reshape(char_cnn_words([word], p), (p.out_dim,))


# --------------------------------------------------------------------------
# highway block

@dataclass
class HighwayParams:
    """Gate and transform of one highway block over dimension d."""

    W_q: Tensor
    b_q: Tensor
    W_h: Tensor
    b_h: Tensor

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator | None = None,
               dtype=np.float32) -> "HighwayParams":
        rng = rng if rng is not None else np.random.default_rng()
        return cls(W_q=uniform_init(rng, (dim, dim), dim, dtype),
                   b_q=Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
                   W_h=uniform_init(rng, (dim, dim), dim, dtype),
                   b_h=Tensor(np.zeros(dim, dtype=dtype), requires_grad=True))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W_q": self.W_q, f"{prefix}.b_q": self.b_q,
                f"{prefix}.W_h": self.W_h, f"{prefix}.b_h": self.b_h}


def highway(x: Tensor, p: HighwayParams,
            f: Callable[[Tensor], Tensor] = ag.relu) -> Tensor:
    """q-gated mix of transform f(W_h x + b_h) and the carry path x."""
    q = ag.sigmoid(ag.add(ag.matmul(x, p.W_q), p.b_q))
    transform = f(ag.add(ag.matmul(x, p.W_h), p.b_h))
    carry = ag.add(ag.neg(q), 1.0)
    return ag.add(ag.mul(q, transform), ag.mul(carry, x))
