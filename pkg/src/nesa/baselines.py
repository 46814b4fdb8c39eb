"""Feature-engineered baselines sharing the model's evaluation surface.

Both consume the same fixed feature vector per instance: averaged word
embeddings of the title, the scaled duration, the user's normalized
start-slot histogram and a binary occupancy grid of the context week.
Logistic regression trains full-batch with a line-halving step; the MLP
trains with Adam and validation-loss early stopping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .ics import SLOTS_PER_WEEK, SchedulingInstance, covered_slots, slot_of
from .layers import tokenize, uniform_init

LOG_FLOOR = 1e-12


# --------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class UserStatsTable:
    """Per-user start-slot histograms from the training split.

    Histograms are add-one smoothed so sparse users keep positive mass
    everywhere; unseen users fall back to the mean training histogram.
    """

    stats: Mapping[str, np.ndarray]
    fallback: np.ndarray

    @classmethod
    def fit(cls, train: Sequence[SchedulingInstance]) -> "UserStatsTable":
        counts: dict[str, np.ndarray] = {}
        for inst in train:
            hist = counts.setdefault(
                inst.target_user, np.zeros(SLOTS_PER_WEEK, dtype=np.float64)
            )
            hist[inst.answer] += 1
        stats = {u: (h + 1) / (h + 1).sum() for u, h in counts.items()}
        if stats:
            fallback = np.mean(list(stats.values()), axis=0)
        else:
            fallback = np.full(SLOTS_PER_WEEK, 1.0 / SLOTS_PER_WEEK)
        return cls(stats=stats, fallback=fallback)

    def for_user(self, user_id: str) -> np.ndarray:
        return self.stats.get(user_id, self.fallback)


class EmbeddingSource:
    """Word -> vector lookup used for title averaging."""

    def __init__(self, words: Sequence[str], matrix: np.ndarray):
        if len(words) != matrix.shape[0]:
            raise ag.ShapeMismatch(
                f"{len(words)} words vs matrix {matrix.shape}")
        self.index = {w: i for i, w in enumerate(words)}
        self.matrix = np.asarray(matrix, dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def featurize(
    instance: SchedulingInstance,
    embeddings: EmbeddingSource,
    user_stats: UserStatsTable,
) -> np.ndarray:
    """Fixed-size vector: [title_avg | duration | user_stats | context]."""
    rows = [embeddings.matrix[i]
            for i in (embeddings.index.get(t) for t in tokenize(instance.target_title))
            if i is not None]
    title_avg = np.mean(rows, axis=0) if rows else np.zeros(embeddings.dim)

    busy = np.zeros(SLOTS_PER_WEEK, dtype=np.float64)
    for e in instance.context:
        busy[covered_slots(slot_of(e.start, instance.tz), e.duration_min)] = 1.0

    return np.concatenate([
        title_avg,
        [instance.target_duration_scaled],
        user_stats.for_user(instance.target_user),
        busy,
    ])


def featurize_all(
    dataset: Sequence[SchedulingInstance],
    embeddings: EmbeddingSource,
    user_stats: UserStatsTable,
) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([featurize(i, embeddings, user_stats) for i in dataset])
    y = np.array([i.answer for i in dataset], dtype=np.int64)
    return x, y


def train_embedding_source(
    train: Sequence[SchedulingInstance], dim: int = 50, seed: int = 0
) -> EmbeddingSource:
    """Random but fixed vectors for the training vocabulary, for when no
    pre-trained file is supplied."""
    vocab = sorted({t for inst in train for t in tokenize(inst.target_title)})
    rng = np.random.Generator(np.random.Philox(seed))
    matrix = rng.standard_normal((len(vocab), dim)) / np.sqrt(dim)
    return EmbeddingSource(vocab, matrix)


# --------------------------------------------------------------------------
# multinomial logistic regression


@dataclass
class LogRegParams:
    W: np.ndarray
    b: np.ndarray
    l2: float

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Softmax probabilities, one row per feature row."""
        single = features.ndim == 1
        x = np.atleast_2d(features)
        if x.shape[1] != self.W.shape[0]:
            raise ag.ShapeMismatch(
                f"features dim {x.shape[1]} != weights {self.W.shape[0]}")
        z = x @ self.W + self.b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        return p[0] if single else p


def _logreg_loss_grad(
    params: LogRegParams, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    n = x.shape[0]
    p = params.predict(x)
    nll = -np.log(np.maximum(p[np.arange(n), y], LOG_FLOOR)).mean()
    loss = nll + 0.5 * params.l2 * (params.W ** 2).sum()
    d = p
    d[np.arange(n), y] -= 1.0
    d /= n
    gw = x.T @ d + params.l2 * params.W
    gb = d.sum(axis=0)
    return loss, gw, gb


def train_logreg(
    dataset: tuple[np.ndarray, np.ndarray],
    l2: float = 1e-4,
    max_steps: int = 500,
    tol: float = 1e-5,
    seed: int = 0,
) -> LogRegParams:
    """Full-batch descent with line halving until the gradient norm (or
    the step budget) runs out.  Deterministic: the seed only names the
    run, nothing is sampled."""
    x, y = dataset
    if x.size == 0:
        raise ValueError("empty dataset")
    params = LogRegParams(
        W=np.zeros((x.shape[1], SLOTS_PER_WEEK)),
        b=np.zeros(SLOTS_PER_WEEK),
        l2=l2,
    )
    loss, gw, gb = _logreg_loss_grad(params, x, y)
    lr = 1.0
    for _ in range(max_steps):
        gnorm = float(np.sqrt((gw ** 2).sum() + (gb ** 2).sum()))
        if gnorm <= tol:
            break
        while True:
            cand = LogRegParams(params.W - lr * gw, params.b - lr * gb, l2)
            cand_loss, cw, cb = _logreg_loss_grad(cand, x, y)
            if cand_loss <= loss or lr < 1e-12:
                break
            lr *= 0.5
        params, loss, gw, gb = cand, cand_loss, cw, cb
        lr *= 1.3
    return params


# --------------------------------------------------------------------------
# two-layer MLP


@dataclass
class MlpParams:
    layers: list[tuple[Tensor, Tensor]]
    l2: float

    def predict(self, features: np.ndarray) -> np.ndarray:
        single = features.ndim == 1
        x = Tensor(np.atleast_2d(features).astype(np.float64))
        p = self._forward(x).data
        return p[0] if single else p

    def _forward(self, x: Tensor) -> Tensor:
        h = x
        for i, (w, b) in enumerate(self.layers):
            h = ag.add(ag.matmul(h, w), b)
            if i < len(self.layers) - 1:
                h = ag.relu(h)
        return ag.softmax(h, axis=-1)

    def tensors(self) -> list[Tensor]:
        return [t for pair in self.layers for t in pair]


def create_mlp(
    in_dim: int,
    hidden: int = 500,
    n_hidden: int = 2,
    l2: float = 1e-4,
    seed: int = 0,
) -> MlpParams:
    rng = np.random.Generator(np.random.Philox(seed))
    dims = [in_dim] + [hidden] * n_hidden + [SLOTS_PER_WEEK]
    layers = []
    for d_in, d_out in zip(dims, dims[1:]):
        w = uniform_init(rng, (d_in, d_out), d_in, np.float64)
        b = Tensor(np.zeros(d_out), requires_grad=True)
        layers.append((w, b))
    return MlpParams(layers=layers, l2=l2)


def _mlp_loss(params: MlpParams, x: np.ndarray, y: np.ndarray) -> Tensor:
    probs = params._forward(Tensor(x))
    nll = ag.cross_entropy(probs, list(y))
    if params.l2 > 0:
        for w, _ in params.layers:
            nll = ag.add(nll, ag.scale(ag.sum_all(ag.mul(w, w)),
                                       0.5 * params.l2))
    return nll


def train_mlp(
    dataset: tuple[np.ndarray, np.ndarray],
    validation: tuple[np.ndarray, np.ndarray],
    hidden: int = 500,
    l2: float = 1e-4,
    lr: float = 5e-4,
    epochs: int = 100,
    batch_size: int = 64,
    patience: int = 5,
    seed: int = 0,
    log: Callable[[str], None] | None = None,
) -> MlpParams:
    """Adam until validation loss stops improving for ``patience``
    epoch-end evaluations; returns the best-validation parameters."""
    x, y = dataset
    vx, vy = validation
    if vx.size == 0:
        raise ValueError("empty validation split")
    params = create_mlp(x.shape[1], hidden=hidden, l2=l2, seed=seed)
    tensors = params.tensors()
    opt = ag.AdamState()
    rng = np.random.Generator(np.random.Philox(seed))

    def val_loss() -> float:
        p = params.predict(vx)
        picked = np.maximum(p[np.arange(len(vy)), vy], LOG_FLOOR)
        return float(-np.log(picked).mean())

    best = np.inf
    best_state = [t.data.copy() for t in tensors]
    bad = 0
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        for lo in range(0, len(order), batch_size):
            idx = order[lo:lo + batch_size]
            with ag.Tape() as tape:
                nll = _mlp_loss(params, x[idx], y[idx])
                tape.backward(nll)
            ag.adam_step(tensors, opt, lr)
            ag.zero_grads(tensors)
        cur = val_loss()
        if log is not None:
            log(f"epoch {epoch}: val nll {cur:.4f}")
        if cur < best:
            best = cur
            best_state = [t.data.copy() for t in tensors]
            bad = 0
        else:
            bad += 1
            if bad > patience:
                break
    for t, state in zip(tensors, best_state):
        t.data[...] = state
    return params


# --------------------------------------------------------------------------
# checkpoints (same container as the model, prefixed names)


def _logreg_tensors(params: LogRegParams) -> dict[str, np.ndarray]:
    return {
        "baseline.logreg.W": params.W.astype(np.float32),
        "baseline.logreg.b": params.b.astype(np.float32),
    }


def _logreg_from(stored: Mapping[str, np.ndarray], meta: dict) -> LogRegParams:
    return LogRegParams(
        W=stored["baseline.logreg.W"].astype(np.float64),
        b=stored["baseline.logreg.b"].astype(np.float64),
        l2=meta["l2"],
    )


def _mlp_tensors(params: MlpParams) -> dict[str, np.ndarray]:
    named: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(params.layers):
        named[f"baseline.mlp.l{i}.W"] = w.data.astype(np.float32)
        named[f"baseline.mlp.l{i}.b"] = b.data.astype(np.float32)
    return named


def _mlp_from(stored: Mapping[str, np.ndarray], meta: dict) -> MlpParams:
    layers = []
    for i in range(meta["n_layers"]):
        w = Tensor(stored[f"baseline.mlp.l{i}.W"].astype(np.float64),
                   requires_grad=True)
        b = Tensor(stored[f"baseline.mlp.l{i}.b"].astype(np.float64),
                   requires_grad=True)
        layers.append((w, b))
    return MlpParams(layers=layers, l2=meta["l2"])


def save_logreg(path, params: LogRegParams) -> None:
    ag.save_tensors(path, _logreg_tensors(params))
    _write_meta(path, "baseline.logreg", {"l2": params.l2})


def load_logreg(path) -> LogRegParams:
    meta = _read_meta(path, "baseline.logreg")
    return _logreg_from(ag.load_tensors(path), meta)


def save_mlp(path, params: MlpParams) -> None:
    ag.save_tensors(path, _mlp_tensors(params))
    _write_meta(path, "baseline.mlp",
                {"l2": params.l2, "n_layers": len(params.layers)})


def load_mlp(path) -> MlpParams:
    meta = _read_meta(path, "baseline.mlp")
    return _mlp_from(ag.load_tensors(path), meta)


@dataclass(frozen=True)
class BaselineBundle:
    """A trained baseline plus the feature pipeline that feeds it.

    Checkpoints store bundles: predictions need the embedding table and
    the user histograms, not just the classifier weights.
    """

    model: LogRegParams | MlpParams
    embeddings: EmbeddingSource
    user_stats: UserStatsTable

    @property
    def kind(self) -> str:
        return "logreg" if isinstance(self.model, LogRegParams) else "mlp"

    def score(self, instance: SchedulingInstance) -> np.ndarray:
        return self.model.predict(
            featurize(instance, self.embeddings, self.user_stats))

    def score_batch(self, batch: Sequence[SchedulingInstance]) -> np.ndarray:
        x = np.stack([featurize(i, self.embeddings, self.user_stats)
                      for i in batch])
        return self.model.predict(x)


def save_bundle(path, bundle: BaselineBundle) -> None:
    model_tensors = (_logreg_tensors(bundle.model)
                     if bundle.kind == "logreg"
                     else _mlp_tensors(bundle.model))
    users = sorted(bundle.user_stats.stats)
    words = sorted(bundle.embeddings.index, key=bundle.embeddings.index.get)
    named = dict(model_tensors)
    named["baseline.features.word_matrix"] = bundle.embeddings.matrix
    named["baseline.features.user_hist"] = (
        np.stack([bundle.user_stats.stats[u] for u in users])
        if users else np.zeros((0, SLOTS_PER_WEEK)))
    named["baseline.features.fallback"] = bundle.user_stats.fallback
    ag.save_tensors(path, named)
    extra: dict = {"bundle": True, "words": words, "stat_users": users,
                   "l2": bundle.model.l2}
    if bundle.kind == "mlp":
        extra["n_layers"] = len(bundle.model.layers)
    _write_meta(path, f"baseline.{bundle.kind}", extra)


def load_bundle(path) -> BaselineBundle:
    with open(str(path) + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    kind = meta.get("kind", "")
    if not meta.get("bundle") or kind not in ("baseline.logreg",
                                              "baseline.mlp"):
        raise ValueError(f"not a baseline bundle: kind {kind!r}")
    stored = ag.load_tensors(path)
    model = (_logreg_from(stored, meta) if kind == "baseline.logreg"
             else _mlp_from(stored, meta))
    embeddings = EmbeddingSource(
        meta["words"],
        stored["baseline.features.word_matrix"].astype(np.float64))
    hist = stored["baseline.features.user_hist"].astype(np.float64)
    user_stats = UserStatsTable(
        stats={u: hist[i] for i, u in enumerate(meta["stat_users"])},
        fallback=stored["baseline.features.fallback"].astype(np.float64))
    return BaselineBundle(model=model, embeddings=embeddings,
                          user_stats=user_stats)


def _write_meta(path, kind: str, extra: dict) -> None:
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump({"format": "nesa-checkpoint", "version": 1, "kind": kind,
                   **extra}, fh, indent=1)
        fh.write("\n")


def _read_meta(path, kind: str) -> dict:
    with open(str(path) + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("kind") != kind:
        raise ValueError(f"checkpoint kind {meta.get('kind')!r}, wanted {kind!r}")
    return meta
