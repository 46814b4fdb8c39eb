"""Ranking metrics, evaluation reports, group scheduling and nearest-neighbor
probes over learned representations.

All ranking is deterministic: probability ties break toward the lower
slot index everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import timezone
from typing import Callable, Iterable, Mapping, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .ics import CalendarEvent, SchedulingInstance, SLOTS_PER_WEEK, HOURS_PER_DAY

__all__ = [
    "EmptyEvaluation", "NoAttendees", "ZeroVector", "MetricsReport",
    "MultiAttendeeRequest", "rank_of", "recall_at_n", "mrr", "ieuc",
    "evaluate", "multi_attendee_suggest", "nearest_titles", "AblationRow",
    "ablation_run", "ABLATION_LABELS", "format_report_table",
    "report_records",
]


class EmptyEvaluation(ValueError):
    """Metrics requested over zero instances."""


class NoAttendees(ValueError):
    """A group scheduling request without any attendee."""


class ZeroVector(ValueError):
    """Cosine similarity against a zero-norm vector."""


@dataclass(frozen=True)
class MetricsReport:
    """The four ranking metrics over one dataset."""

    recall_at_1: float
    recall_at_5: float
    mrr: float
    ieuc: float
    n_instances: int


@dataclass(frozen=True)
class MultiAttendeeRequest:
    """One meeting to place for several attendees at once."""

    title: str
    duration_scaled: float
    attendees: tuple[str, ...]
    contexts: Mapping[str, tuple[CalendarEvent, ...]]
    iso_year: int
    iso_week: int
    tz: timezone | ZoneInfo = timezone.utc


Scorer = Callable[[SchedulingInstance], np.ndarray]


def rank_of(probabilities: np.ndarray, answer: int) -> int:
    """1-based rank of the answer slot; a tied lower index outranks."""
    p = np.asarray(probabilities)
    target = p[answer]
    better = int(np.sum(p > target))
    tied_before = int(np.sum(p[:answer] == target))
    return 1 + better + tied_before


def recall_at_n(ranks: Sequence[int], n: int) -> float:
    ranks = list(ranks)
    if not ranks:
        raise EmptyEvaluation("no ranks to aggregate")
    return sum(1 for r in ranks if r <= n) / len(ranks)


def mrr(ranks: Sequence[int]) -> float:
    ranks = sorted(ranks)  # fixed summation order: exact permutation invariance
    if not ranks:
        raise EmptyEvaluation("no ranks to aggregate")
    return float(np.mean([1.0 / r for r in ranks]))


def ieuc(predicted: int, answer: int) -> float:
    """Inverse euclidean distance between two slots on the day/hour grid."""
    pm, pn = divmod(predicted, HOURS_PER_DAY)
    am, an = divmod(answer, HOURS_PER_DAY)
    return 1.0 / (np.sqrt((pm - am) ** 2 + (pn - an) ** 2) + 1.0)


def evaluate(scorer: Scorer, dataset: Sequence[SchedulingInstance],
             scorer_batch: Callable[[Sequence[SchedulingInstance]], np.ndarray]
             | None = None,
             batch_size: int = 64) -> MetricsReport:
    """Aggregate the four metrics over a dataset.

    ``scorer_batch``, when given, is used in chunks instead of per-instance
    calls; both paths produce identical numbers.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyEvaluation("empty dataset")
    ranks: list[int] = []
    ieucs: list[float] = []
    for lo in range(0, len(dataset), batch_size):
        chunk = dataset[lo:lo + batch_size]
        if scorer_batch is not None:
            rows = np.asarray(scorer_batch(chunk))
        else:
            rows = np.stack([np.asarray(scorer(inst)) for inst in chunk])
        for row, inst in zip(rows, chunk):
            ranks.append(rank_of(row, inst.answer))
            top1 = int(np.argmax(row))
            ieucs.append(ieuc(top1, inst.answer))
    return MetricsReport(
        recall_at_1=recall_at_n(ranks, 1),
        recall_at_5=recall_at_n(ranks, 5),
        mrr=mrr(ranks),
        ieuc=float(np.mean(sorted(ieucs))),
        n_instances=len(dataset),
    )


def multi_attendee_suggest(request: MultiAttendeeRequest, scorer: Scorer,
                           k: int) -> list[tuple[int, float]]:
    """Top-k slots by the sum of per-attendee probabilities (equal weights).

    Scores accumulate in 64-bit reals so attendee order cannot perturb
    the ranking."""
    if not request.attendees:
        raise NoAttendees("request has no attendees")
    if not 1 <= k <= SLOTS_PER_WEEK:
        raise ValueError(f"k out of range: {k}")
    total = np.zeros(SLOTS_PER_WEEK, dtype=np.float64)
    for user in request.attendees:
        inst = SchedulingInstance(
            context=tuple(request.contexts.get(user, ())),
            target_title=request.title,
            target_duration_scaled=request.duration_scaled,
            target_user=user,
            answer=0,
            iso_year=request.iso_year,
            iso_week=request.iso_week,
            tz=request.tz,
        )
        total += np.asarray(scorer(inst), dtype=np.float64)
    order = np.argsort(-total, kind="stable")
    return [(int(s), float(total[s])) for s in order[:k]]


def nearest_titles(query_vector: np.ndarray,
                   corpus: Sequence[tuple[str, np.ndarray]],
                   k: int) -> list[tuple[str, float]]:
    """Top-k corpus entries by cosine similarity to the query, descending."""
    q = np.asarray(query_vector, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ZeroVector("query vector has zero norm")
    sims = []
    for title, vec in corpus:
        v = np.asarray(vec, dtype=np.float64)
        vn = np.linalg.norm(v)
        if vn == 0:
            raise ZeroVector(f"corpus vector for {title!r} has zero norm")
        sims.append(float(q @ v / (qn * vn)))
    order = np.argsort(-np.asarray(sims), kind="stable")
    return [(corpus[i][0], sims[i]) for i in order[:k]]


# --------------------------------------------------------------------------
# ablation tables

ABLATION_LABELS: dict[str, str] = {
    "context": "- Context",
    "intention": "- Intention",
    "word_emb": "- Word Emb.",
    "char_emb": "- Char Emb.",
    "duration": "- Duration",
    "user_emb": "- User Emb.",
}


@dataclass(frozen=True)
class AblationRow:
    label: str
    report: MetricsReport
    pct_diff: dict[str, float] | None  # vs the full model; None on that row


def ablation_run(base_config, splits,
                 train_fn: Callable[[object, object], Scorer],
                 flags: Sequence[str] = tuple(ABLATION_LABELS)) -> list[AblationRow]:
    """Train and evaluate the full model plus one run per disabled flag.

    ``train_fn(config, splits) -> scorer`` owns all training details;
    evaluation runs on ``splits.test``.
    """
    rows = []
    full_scorer = train_fn(base_config, splits)
    full = evaluate(full_scorer, splits.test)
    rows.append(AblationRow(label="full model", report=full, pct_diff=None))
    for flag in flags:
        config = base_config.with_ablation([flag])
        scorer = train_fn(config, splits)
        report = evaluate(scorer, splits.test)
        diffs = {
            name: (getattr(report, name) - getattr(full, name))
                  / getattr(full, name) * 100.0
            for name in ("recall_at_1", "recall_at_5", "mrr", "ieuc")
            if getattr(full, name) != 0
        }
        rows.append(AblationRow(label=ABLATION_LABELS[flag], report=report,
                                pct_diff=diffs))
    return rows


# --------------------------------------------------------------------------
# report emission

_METRIC_COLS = ("recall_at_1", "recall_at_5", "mrr", "ieuc")


def format_report_table(rows: Iterable[tuple[str, MetricsReport]]) -> str:
    """Aligned plain-text table, one row per labeled report."""
    rows = list(rows)
    label_w = max([len("model")] + [len(label) for label, _ in rows])
    header = f"{'model':<{label_w}}  recall@1  recall@5       mrr      ieuc         n"
    lines = [header, "-" * len(header)]
    for label, rep in rows:
        lines.append(
            f"{label:<{label_w}}  {rep.recall_at_1:8.4f}  {rep.recall_at_5:8.4f}"
            f"  {rep.mrr:8.4f}  {rep.ieuc:8.4f}  {rep.n_instances:8d}")
    return "\n".join(lines)


def report_records(rows: Iterable[tuple[str, MetricsReport]]) -> list[dict]:
    """One structured record per labeled report (for regression tracking)."""
    out = []
    for label, rep in rows:
        rec = {"model": label, "n_instances": rep.n_instances}
        rec.update({name: getattr(rep, name) for name in _METRIC_COLS})
        out.append(rec)
    return out
