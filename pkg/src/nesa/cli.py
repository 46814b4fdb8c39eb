"""Operator commands: generate calendars, train, evaluate, suggest,
run ablation tables and serve the HTTP API.

Exit codes: 0 success, 1 usage error (bad or missing flags), 2 data
error (unreadable files, incompatible checkpoints, malformed
calendars).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import model as md
from .datagen import SyntheticConfig, emit_ics, gen_dataset, write_gold
from .dataset import Splits, load_word_embeddings, split_weeks
from .evaluate import (
    ABLATION_LABELS,
    EmptyEvaluation,
    ablation_run,
    evaluate,
    format_report_table,
)
from .ics import (
    CalendarEvent,
    InvalidDateTime,
    MalformedComponent,
    MissingRequiredProperty,
    SLOTS_PER_WEEK,
    SchedulingInstance,
    instances_from_events,
    parse_ics,
    scale_duration,
    slot_to_day_hour,
)
from .service import CalendarService, CalendarStore, run_server
from .train import batch_scorer, train_nesa

__all__ = [
    "MissingFlag", "FileNotFound", "IncompatibleCheckpoint", "RunConfig",
    "cmd_gen", "cmd_train", "cmd_eval", "cmd_suggest", "cmd_ablate",
    "cmd_serve", "main",
]


class MissingFlag(ValueError):
    """A required flag was not supplied."""


class FileNotFound(FileNotFoundError):
    """A flag points at a file or directory that does not exist."""


class IncompatibleCheckpoint(ValueError):
    """Checkpoint kind or shape disagrees with the requested run."""


MODEL_KINDS = ("nesa", "logreg", "mlp")


@dataclass(frozen=True)
class RunConfig:
    """Everything one training or evaluation run needs."""

    data_dir: str
    checkpoint: str | None = None
    embeddings: str | None = None
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    epochs: int = 5
    batch_size: int = 32
    model: str = "nesa"
    ablate: tuple[str, ...] = ()

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1: {self.fractions}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1: {self.batch_size}")
        if self.model not in MODEL_KINDS + ("oracle",):
            raise ValueError(f"unknown model kind: {self.model!r}")


# --------------------------------------------------------------------------
# shared loading steps


def _require(value, flag: str):
    if value is None:
        raise MissingFlag(f"--{flag} is required")
    return value


def load_events_dir(data_dir) -> list[CalendarEvent]:
    """All events from every .ics file in a directory, file order fixed."""
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFound(f"no such data directory: {data_dir}")
    files = sorted(root.glob("*.ics"))
    if not files:
        raise FileNotFound(f"no .ics files in {data_dir}")
    events: list[CalendarEvent] = []
    for path in files:
        events.extend(parse_ics(path.read_bytes(), default_user=path.stem))
    return events


def load_splits(config: RunConfig) -> Splits:
    instances = instances_from_events(load_events_dir(config.data_dir))
    return Splits(*split_weeks(instances, config.fractions, seed=config.seed))


def _load_embedding_file(path):
    if not Path(path).is_file():
        raise FileNotFound(f"no such embedding file: {path}")
    return load_word_embeddings(path)


def load_scorer(checkpoint_path):
    """(per-instance scorer, batch scorer, kind) from a checkpoint pair."""
    path = Path(checkpoint_path)
    meta_path = Path(str(checkpoint_path) + ".json")
    if not path.is_file() or not meta_path.is_file():
        raise FileNotFound(f"no checkpoint at {checkpoint_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    kind = meta.get("kind")
    try:
        if kind == "nesa":
            params = md.load_checkpoint(checkpoint_path)
            scorer = lambda inst: md.forward(inst, params, mode="eval").data
            return scorer, batch_scorer(params), kind
        if kind in ("baseline.logreg", "baseline.mlp"):
            bundle = bl.load_bundle(checkpoint_path)
            return bundle.score, bundle.score_batch, kind
    except (ValueError, KeyError) as err:
        raise IncompatibleCheckpoint(str(err)) from err
    raise IncompatibleCheckpoint(f"unknown checkpoint kind: {kind!r}")


def _checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    out = Path(_require(args.data, "data"))
    config = SyntheticConfig(
        seed=args.seed,
        num_users=args.users,
        weeks_per_user=args.weeks,
        mean_events_per_week=args.mean_events,
        noise_rate=args.noise,
        misspelling_rate=args.misspelling_rate,
        non_english_rate=args.non_english_rate,
        multi_attendee_rate=args.multi_rate,
    )
    events, gold = gen_dataset(config)
    out.mkdir(parents=True, exist_ok=True)
    calendars = emit_ics(events)
    for user, data in calendars.items():
        (out / f"{user}.ics").write_bytes(data)
    write_gold(out / "gold.jsonl", gold)
    print(f"wrote {len(events)} events across {len(calendars)} calendars to {out}")
    return 0


def _train_config(run: RunConfig, embeddings) -> md.NesaConfig:
    config = md.DESK_CONFIG
    if embeddings is not None:
        config = replace(config, word_dim=embeddings[1].shape[1])
    if run.ablate:
        config = config.with_ablation(run.ablate)
    return config


def _run_config(args, model: str | None = None) -> RunConfig:
    return RunConfig(
        data_dir=_require(args.data, "data"),
        checkpoint=getattr(args, "checkpoint", None),
        embeddings=getattr(args, "embeddings", None),
        seed=args.seed,
        epochs=getattr(args, "epochs", 5),
        batch_size=getattr(args, "batch_size", 32),
        model=model if model is not None else getattr(args, "model", "nesa"),
        ablate=tuple(getattr(args, "ablate", ()) or ()),
    )


def _train_baseline(run: RunConfig, splits: Splits, log) -> bl.BaselineBundle:
    if run.embeddings is not None:
        words, matrix = _load_embedding_file(run.embeddings)
        source = bl.EmbeddingSource(words, matrix.astype(np.float64))
    else:
        source = bl.train_embedding_source(splits.train, seed=run.seed)
    stats = bl.UserStatsTable.fit(splits.train)
    train_xy = bl.featurize_all(splits.train, source, stats)
    valid_xy = bl.featurize_all(splits.valid, source, stats)
    if run.model == "logreg":
        params = bl.train_logreg(train_xy, seed=run.seed)
    else:
        params = bl.train_mlp(train_xy, valid_xy, epochs=run.epochs,
                              seed=run.seed, log=log)
    return bl.BaselineBundle(model=params, embeddings=source, user_stats=stats)


def cmd_train(args) -> int:
    run = _run_config(args)
    if run.model == "oracle":
        raise MissingFlag("--model oracle is only valid for eval")
    checkpoint = _require(run.checkpoint, "checkpoint")
    splits = load_splits(run)
    log = lambda line: print(line, file=sys.stderr)

    if run.model == "nesa":
        embeddings = (_load_embedding_file(run.embeddings)
                      if run.embeddings is not None else None)
        config = _train_config(run, embeddings)
        result = train_nesa(
            splits.train, splits.valid, config,
            seed=run.seed, epochs=run.epochs, batch_size=run.batch_size,
            embeddings=embeddings, checkpoint_path=checkpoint, log=log,
        )
        print(f"best epoch {result.best_epoch} "
              f"val_mrr {result.best_val_mrr:.4f} -> {checkpoint}")
        return 0

    bundle = _train_baseline(run, splits, log)
    bl.save_bundle(checkpoint, bundle)
    report = evaluate(bundle.score, splits.valid,
                      scorer_batch=bundle.score_batch)
    print(f"{run.model} val_mrr {report.mrr:.4f} -> {checkpoint}")
    return 0


def _oracle_batch(chunk) -> np.ndarray:
    rows = np.zeros((len(chunk), SLOTS_PER_WEEK))
    for i, inst in enumerate(chunk):
        rows[i, inst.answer] = 1.0
    return rows


def cmd_eval(args) -> int:
    run = _run_config(args, model=args.model or "nesa")
    splits = load_splits(run)
    if run.model == "oracle":
        report = evaluate(lambda inst: _oracle_batch([inst])[0], splits.test,
                          scorer_batch=_oracle_batch)
        print(format_report_table([("oracle", report)]))
        return 0

    checkpoint = _require(run.checkpoint, "checkpoint")
    scorer, scorer_batch, kind = load_scorer(checkpoint)
    if args.model is not None:
        wanted = "nesa" if args.model == "nesa" else f"baseline.{args.model}"
        if kind != wanted:
            raise IncompatibleCheckpoint(
                f"checkpoint holds {kind!r}, --model asked for {wanted!r}")
    report = evaluate(scorer, splits.test, scorer_batch=scorer_batch)
    print(format_report_table([(kind, report)]))
    return 0


def cmd_suggest(args) -> int:
    path = Path(_require(args.data, "data"))
    checkpoint = _require(args.checkpoint, "checkpoint")
    user = _require(args.user, "user")
    title = _require(args.title, "title")
    duration_min = _require(args.duration_min, "duration-min")
    if not path.is_file():
        raise FileNotFound(f"no such calendar file: {path}")
    scorer, _, _ = load_scorer(checkpoint)

    events = parse_ics(path.read_bytes(), default_user=user)
    if events:
        year, week = max(e.start.isocalendar()[:2] for e in events)
    else:
        today = datetime.now(timezone.utc).isocalendar()
        year, week = today[0], today[1]
    context = sorted(
        (e for e in events if e.start.isocalendar()[:2] == (year, week)),
        key=lambda e: (e.registered_at, e.uid),
    )
    instance = SchedulingInstance(
        context=tuple(context),
        target_title=title,
        target_duration_scaled=scale_duration(duration_min),
        target_user=user,
        answer=0,
        iso_year=year,
        iso_week=week,
    )
    probabilities = np.asarray(scorer(instance), dtype=np.float64)
    order = np.argsort(-probabilities, kind="stable")
    for slot in order[: args.k]:
        day, hour = slot_to_day_hour(int(slot))
        print(f"{int(slot)} {day} {hour} {probabilities[slot]:.6f}")
    return 0


def cmd_ablate(args) -> int:
    run = _run_config(args, model="nesa")
    splits = load_splits(run)
    embeddings = (_load_embedding_file(run.embeddings)
                  if run.embeddings is not None else None)
    base = _train_config(replace(run, ablate=()), embeddings)
    flags = run.ablate or tuple(ABLATION_LABELS)

    def train_fn(config, data):
        result = train_nesa(
            data.train, data.valid, config,
            seed=run.seed, epochs=run.epochs, batch_size=run.batch_size,
            embeddings=embeddings,
            log=lambda line: print(line, file=sys.stderr),
        )
        return lambda inst: md.forward(inst, result.params, mode="eval").data

    rows = ablation_run(base, splits, train_fn, flags)
    print(format_report_table([(r.label, r.report) for r in rows]))
    print()
    for row in rows[1:]:
        print(f"{row.label}: mrr {row.pct_diff['mrr']:+.1f}%")
    return 0


def cmd_serve(args) -> int:
    scorer = None
    checkpoint_hash = None
    if args.checkpoint is not None:
        scorer, _, _ = load_scorer(args.checkpoint)
        checkpoint_hash = _checkpoint_hash(args.checkpoint)
    store = CalendarStore(journal_path=args.journal)
    if args.data is not None:
        n = store.preload(load_events_dir(args.data))
        print(f"preloaded {n} events from {args.data}", file=sys.stderr)
    service = CalendarService(
        scorer=scorer,
        checkpoint_hash=checkpoint_hash,
        strict=args.strict,
        store=store,
    )
    run_server(service, args.port)
    return 0


# --------------------------------------------------------------------------
# argument plumbing


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text}")
    return value


def _rate(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1]: {text}")
    return value


def _flag_list(text: str) -> tuple[str, ...]:
    flags = tuple(f.strip() for f in text.split(",") if f.strip())
    bad = [f for f in flags if f.removeprefix("use_") not in ABLATION_LABELS]
    if bad:
        raise argparse.ArgumentTypeError(
            f"unknown ablation flags: {', '.join(bad)}")
    return flags


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nesa", description="Calendar slot suggestion toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--data", help="output directory")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--users", type=_positive_int, default=20)
    gen.add_argument("--weeks", type=_positive_int, default=40)
    gen.add_argument("--mean-events", type=float, default=6.9)
    gen.add_argument("--noise", type=_rate, default=0.1)
    gen.add_argument("--misspelling-rate", type=_rate, default=0.0)
    gen.add_argument("--non-english-rate", type=_rate, default=0.0)
    gen.add_argument("--multi-rate", type=_rate, default=0.0)
    gen.set_defaults(cmd=cmd_gen)

    train = sub.add_parser("train", help="train a model and checkpoint it")
    train.add_argument("--data")
    train.add_argument("--checkpoint")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--epochs", type=_positive_int, default=5)
    train.add_argument("--batch-size", type=_positive_int, default=32)
    train.add_argument("--model", choices=MODEL_KINDS, default="nesa")
    train.add_argument("--embeddings", help="text embedding file")
    train.add_argument("--ablate", type=_flag_list, default=())
    train.set_defaults(cmd=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    ev.add_argument("--data")
    ev.add_argument("--checkpoint")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--model", choices=MODEL_KINDS + ("oracle",), default=None)
    ev.set_defaults(cmd=cmd_eval)

    suggest = sub.add_parser("suggest", help="rank slots for a new event")
    suggest.add_argument("--data", help="calendar .ics file for context")
    suggest.add_argument("--checkpoint")
    suggest.add_argument("--user")
    suggest.add_argument("--title")
    suggest.add_argument("--duration-min", type=_positive_int)
    suggest.add_argument("--k", type=_positive_int, default=5)
    suggest.set_defaults(cmd=cmd_suggest)

    ablate = sub.add_parser("ablate", help="full model vs single-component drops")
    ablate.add_argument("--data")
    ablate.add_argument("--seed", type=int, default=0)
    ablate.add_argument("--epochs", type=_positive_int, default=5)
    ablate.add_argument("--batch-size", type=_positive_int, default=32)
    ablate.add_argument("--embeddings")
    ablate.add_argument("--ablate", type=_flag_list, default=(),
                        help="comma-separated flags; default: all")
    ablate.set_defaults(cmd=cmd_ablate)

    serve = sub.add_parser("serve", help="HTTP suggestion service")
    serve.add_argument("--checkpoint")
    serve.add_argument("--port", type=int, default=8765)
    serve.add_argument("--data", help="preload calendars from this directory")
    serve.add_argument("--journal", help="append-only event journal file")
    serve.add_argument("--strict", action="store_true",
                       help="reject registrations into occupied slots")
    serve.set_defaults(cmd=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    try:
        return args.cmd(args)
    except MissingFlag as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (FileNotFound, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (IncompatibleCheckpoint, MalformedComponent,
            MissingRequiredProperty, InvalidDateTime, EmptyEvaluation,
            ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
