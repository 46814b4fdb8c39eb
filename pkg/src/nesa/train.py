"""Model training: Adam with gradient clipping, validation-MRR selection.

The loop is fully deterministic under its seed: initialization, batch
order, dropout and user-id masking all draw from one Philox stream, so
two runs with the same data and seed produce identical traces and
byte-identical checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from . import model as md
from .dataset import align_embeddings, bucketed_batches
from .evaluate import evaluate
from .ics import SchedulingInstance


@dataclass
class TrainResult:
    """Trained parameters plus the per-epoch record that selected them."""

    params: md.NesaParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mrr: float = 0.0


def batch_scorer(
    params: md.NesaParams,
) -> Callable[[Sequence[SchedulingInstance]], np.ndarray]:
    """Evaluation-mode probability rows, the shape `evaluate` consumes."""
    def score(batch: Sequence[SchedulingInstance]) -> np.ndarray:
        return md.forward_batch(batch, params, mode="eval").data
    return score


def _snapshot(params: md.NesaParams) -> dict[str, np.ndarray]:
    state = {name: t.data.copy() for name, t in params.named_tensors().items()}
    state.update({name: b.copy() for name, b in params.buffers().items()})
    return state


def _restore(params: md.NesaParams, state: dict[str, np.ndarray]) -> None:
    for name, t in params.named_tensors().items():
        t.data[...] = state[name]
    for name, b in params.buffers().items():
        b[...] = state[name]


def train_nesa(
    train: Sequence[SchedulingInstance],
    valid: Sequence[SchedulingInstance],
    config: md.NesaConfig,
    seed: int = 0,
    epochs: int = 5,
    batch_size: int = 32,
    embeddings: tuple[Sequence[str], np.ndarray] | None = None,
    checkpoint_path=None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Fit on ``train``, keep the epoch with the best validation MRR.

    ``embeddings`` installs frozen word vectors (words, matrix); the
    vocabulary itself always comes from the training split.  When
    ``checkpoint_path`` is set the selected parameters are saved there.
    """
    if not train or not valid:
        raise ValueError("need non-empty train and validation splits")
    rng = np.random.Generator(np.random.Philox(seed))
    vocab = md.build_vocab(train)
    users = md.build_users(train)

    word_matrix = None
    if embeddings is not None:
        words, matrix = embeddings
        if matrix.shape[1] != config.word_dim:
            raise ag.ShapeMismatch(
                f"embedding dim {matrix.shape[1]} != config word_dim "
                f"{config.word_dim}")
        word_matrix = align_embeddings(vocab, words, matrix)

    params = md.NesaParams.create(config, vocab, users, rng,
                                  word_matrix=word_matrix)
    trainable = [t for _, t in params.trainable()]
    opt = ag.AdamState()

    result = TrainResult(params=params)
    best_state = _snapshot(params)
    for epoch in range(epochs):
        total_nll = 0.0
        seen = 0
        for batch in bucketed_batches(train, batch_size, rng):
            with ag.Tape() as tape:
                nll = md.loss(batch, params, mode="train", rng=rng)
                tape.backward(nll)
            ag.clip_grad_norm(trainable, config.grad_clip)
            ag.adam_step(trainable, opt, config.learning_rate)
            ag.zero_grads(trainable)
            total_nll += nll.item() * len(batch)
            seen += len(batch)
        val = evaluate(None, valid, scorer_batch=batch_scorer(params))
        record = {
            "epoch": epoch,
            "train_nll": total_nll / seen,
            "val_mrr": val.mrr,
            "val_recall1": val.recall_at_1,
        }
        result.history.append(record)
        if log is not None:
            log(f"epoch {epoch}: train nll {record['train_nll']:.4f} "
                f"val mrr {val.mrr:.4f}")
        if val.mrr > result.best_val_mrr or result.best_epoch < 0:
            result.best_epoch = epoch
            result.best_val_mrr = val.mrr
            best_state = _snapshot(params)

    _restore(params, best_state)
    if checkpoint_path is not None:
        md.save_checkpoint(checkpoint_path, params)
    return result
