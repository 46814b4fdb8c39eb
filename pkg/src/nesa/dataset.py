"""Dataset plumbing: week-level splits, embedding files and batch order.

Splits keep whole (user, week) groups together so an instance's context
never leaks into another split.
"""

from __future__ import annotations

from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .ics import SchedulingInstance


class Splits(NamedTuple):
    """The standard three-way partition."""

    train: list[SchedulingInstance]
    valid: list[SchedulingInstance]
    test: list[SchedulingInstance]


def split_weeks(
    instances: Sequence[SchedulingInstance],
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[SchedulingInstance], ...]:
    """Partition instances into len(fractions) splits by whole weeks.

    Week keys are shuffled with a seeded Philox stream and allocated by
    cumulative rounding, so the same seed always yields the same split.
    """
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1: {fractions}")
    groups: dict[tuple[str, int, int], list[SchedulingInstance]] = {}
    for inst in instances:
        key = (inst.target_user, inst.iso_year, inst.iso_week)
        groups.setdefault(key, []).append(inst)
    keys = sorted(groups)
    rng = np.random.Generator(np.random.Philox(seed))
    rng.shuffle(keys)

    n = len(keys)
    bounds = [0]
    acc = 0.0
    for f in fractions:
        acc += f
        bounds.append(round(acc * n))
    out = []
    for lo, hi in zip(bounds, bounds[1:]):
        split: list[SchedulingInstance] = []
        for key in keys[lo:hi]:
            split.extend(groups[key])
        out.append(split)
    return tuple(out)


def load_word_embeddings(path) -> tuple[list[str], np.ndarray]:
    """Read a text embedding file: one ``word v1 ... vd`` line per word.

    A leading two-integer header line (word2vec convention) is skipped;
    inconsistent dimensions raise.
    """
    words: list[str] = []
    rows: list[np.ndarray] = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue
                except ValueError:
                    pass
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float32)
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: bad embedding line") from err
            if dim is None:
                dim = vec.size
                if dim == 0:
                    raise ValueError(f"{path}:{lineno}: no values")
            elif vec.size != dim:
                raise ValueError(
                    f"{path}:{lineno}: dimension {vec.size} != {dim}"
                )
            words.append(parts[0])
            rows.append(vec)
    if not words:
        raise ValueError(f"{path}: empty embedding file")
    return words, np.stack(rows)


def align_embeddings(
    vocab: Sequence[str], words: Sequence[str], matrix: np.ndarray
) -> np.ndarray:
    """Rows of ``matrix`` reordered to ``vocab``; missing words get zero
    rows (the character path still covers them)."""
    index = {w: i for i, w in enumerate(words)}
    out = np.zeros((len(vocab), matrix.shape[1]), dtype=np.float32)
    for i, w in enumerate(vocab):
        j = index.get(w)
        if j is not None:
            out[i] = matrix[j]
    return out


def bucketed_batches(
    instances: Sequence[SchedulingInstance],
    batch_size: int,
    rng: np.random.Generator | None = None,
) -> Iterator[list[SchedulingInstance]]:
    """Batches of similar context size (cheap padding), in shuffled order
    when an rng is given."""
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1: {batch_size}")
    order = np.arange(len(instances))
    if rng is not None:
        rng.shuffle(order)
    order = sorted(order, key=lambda i: (len(instances[i].context), i))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        rng.shuffle(chunks)
    for chunk in chunks:
        yield [instances[i] for i in chunk]
