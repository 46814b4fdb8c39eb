"""Synthetic multi-user calendars with planted, recoverable habits.

Each user gets a persona: per event-kind hour and weekday preferences
(discretized wrapped normals), concrete title templates, a duration
table and a weekly event budget.  Weeks are sampled one event at a
time and never overlap, so the conditional distribution of an event's
start slot given everything registered before it has a closed form:

    p(slot) = noise * uniform(free) + (1 - noise) * kind_dist | free

``bayes_score_table`` recovers that conditional from the gold labels,
giving an oracle whose ranking quality upper-bounds any model trained
on the same data.

The RNG is Philox, a counter-based 64-bit generator with a fixed
published algorithm, so a seed produces identical bytes on every
platform.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, time, timedelta, timezone
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ics import (
    SLOTS_PER_WEEK,
    CalendarEvent,
    SchedulingInstance,
    build_instances,
    covered_slots,
    filter_noise,
    group_by_week,
    resolve_overlaps,
    slot_of,
    slot_to_datetime,
)

HOURS_PER_DAY = 24
DAYS_PER_WEEK = 7

VOWELS = set("aeiouAEIOU")

# English -> Spanish, applied word-wise when a title goes non-English.
DEFAULT_LEXICON: dict[str, str] = {
    "meeting": "reunión",
    "lunch": "almuerzo",
    "dinner": "cena",
    "team": "equipo",
    "call": "llamada",
    "review": "revisión",
    "planning": "planificación",
    "session": "sesión",
    "client": "cliente",
    "project": "proyecto",
    "design": "diseño",
    "gym": "gimnasio",
    "run": "carrera",
    "class": "clase",
    "swim": "natación",
    "practice": "práctica",
    "grocery": "mercado",
    "haircut": "corte",
    "dentist": "dentista",
    "birthday": "cumpleaños",
    "family": "familia",
    "night": "noche",
    "morning": "mañana",
    "downtown": "centro",
    "with": "con",
}


# --------------------------------------------------------------------------
# personas


def wrapped_normal(bins: int, mu: float, sigma: float) -> np.ndarray:
    """Normal density wrapped onto ``bins`` circular positions, normalized."""
    if bins < 1 or sigma <= 0:
        raise ValueError(f"bad wrapped normal: bins={bins} sigma={sigma}")
    x = np.arange(bins, dtype=np.float64)
    dens = np.zeros(bins, dtype=np.float64)
    for k in range(-3, 4):
        dens += np.exp(-0.5 * ((x - mu + k * bins) / sigma) ** 2)
    return dens / dens.sum()


@dataclass
class KindProfile:
    """One event kind's preferences: when it happens and what it is called."""

    templates: tuple[str, ...]
    hour_dist: np.ndarray
    day_dist: np.ndarray
    durations: tuple[int, ...]
    duration_probs: np.ndarray
    slot_dist: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if not self.templates:
            raise ValueError("a kind needs at least one title template")
        self.hour_dist = _normalized(self.hour_dist, HOURS_PER_DAY, "hour_dist")
        self.day_dist = _normalized(self.day_dist, DAYS_PER_WEEK, "day_dist")
        self.duration_probs = _normalized(
            self.duration_probs, len(self.durations), "duration_probs"
        )
        if any(d <= 0 for d in self.durations):
            raise ValueError(f"non-positive duration in {self.durations}")
        self.slot_dist = np.outer(self.day_dist, self.hour_dist).ravel()


def _normalized(dist, expected_len: int, name: str) -> np.ndarray:
    arr = np.asarray(dist, dtype=np.float64)
    if arr.shape != (expected_len,):
        raise ValueError(f"{name} must have shape ({expected_len},), got {arr.shape}")
    if (arr < 0).any() or arr.sum() <= 0:
        raise ValueError(f"{name} must be non-negative with positive mass")
    return arr / arr.sum()


@dataclass
class Persona:
    """One user's generating process."""

    user_id: str
    kinds: dict[str, KindProfile]
    kind_weights: np.ndarray
    mean_events: float
    noise_rate: float

    def __post_init__(self) -> None:
        if not 0 <= self.noise_rate < 0.5:
            raise ValueError(f"noise rate must be in [0, 0.5): {self.noise_rate}")
        if self.mean_events <= 0:
            raise ValueError(f"mean events must be positive: {self.mean_events}")
        self.kind_weights = _normalized(
            self.kind_weights, len(self.kinds), "kind_weights"
        )

    @property
    def kind_names(self) -> tuple[str, ...]:
        return tuple(self.kinds)


# base shapes each persona is jittered from: preferred hour / weekday
# (mu, sigma), durations with probabilities, and titles.  "{name}" is
# filled with a per-persona collaborator at build time.
_KIND_BASES: dict[str, dict] = {
    "meeting": {
        "hour": (10.0, 0.6),
        "day": (1.5, 1.0),
        "durations": ((60, 120, 180), (0.4, 0.35, 0.25)),
        "templates": (
            "Team meeting",
            "Project sync",
            "Weekly standup",
            "Client call",
            "Design review",
            "Planning session with {name}",
        ),
        "alpha": 14.0,
    },
    "lunch": {
        "hour": (12.0, 0.5),
        "day": (2.0, 1.6),
        "durations": ((60,), (1.0,)),
        "templates": ("Lunch with {name}", "Team lunch", "Lunch downtown"),
        "alpha": 5.0,
    },
    "dinner": {
        "hour": (19.0, 0.8),
        "day": (4.5, 1.2),
        "durations": ((120, 180), (0.6, 0.4)),
        "templates": (
            "Dinner with {name}",
            "Family dinner",
            "Birthday dinner",
            "Date night",
        ),
        "alpha": 3.0,
    },
    "workout": {
        "hour": (7.0, 0.6),
        "day": (2.0, 1.8),
        "durations": ((60, 90), (0.7, 0.3)),
        "templates": ("Gym", "Morning run", "Yoga class", "Swim practice"),
        "alpha": 3.0,
    },
    "errand": {
        "hour": (15.0, 1.2),
        "day": (5.3, 0.8),
        "durations": ((60, 120), (0.7, 0.3)),
        "templates": (
            "Grocery run",
            "Haircut",
            "Dentist appointment",
            "Car service",
            "Pick up package",
        ),
        "alpha": 2.0,
    },
}

DEFAULT_KIND_NAMES: tuple[str, ...] = tuple(_KIND_BASES)

_COLLABORATORS = ("Priya", "Alex", "Sam", "Noor", "Kai", "Dana", "Maria", "Lee")


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for one generated dataset."""

    seed: int = 0
    num_users: int = 20
    weeks_per_user: int = 40
    kinds: tuple[str, ...] = DEFAULT_KIND_NAMES
    mean_events_per_week: float = 6.9
    noise_rate: float = 0.1
    misspelling_rate: float = 0.0
    non_english_rate: float = 0.0
    multi_attendee_rate: float = 0.0
    overlap_rate: float = 0.0
    start_year: int = 2024
    start_week: int = 2

    def __post_init__(self) -> None:
        if self.num_users < 1 or self.weeks_per_user < 1:
            raise ValueError("need at least one user and one week")
        if self.mean_events_per_week <= 0:
            raise ValueError("mean events per week must be positive")
        if not 0 <= self.noise_rate < 0.5:
            raise ValueError(f"noise rate must be in [0, 0.5): {self.noise_rate}")
        for name in ("misspelling_rate", "non_english_rate",
                     "multi_attendee_rate", "overlap_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1]: {v}")
        unknown = [k for k in self.kinds if k not in _KIND_BASES]
        if unknown:
            raise ValueError(f"unknown event kinds: {unknown}")


def make_personas(config: SyntheticConfig, rng: np.random.Generator) -> list[Persona]:
    """Draw one persona per user: base kind shapes with per-user jitter
    in peak hour (+-3h), peak day (+-1) and spread (x0.75..1.15)."""
    personas = []
    alphas = np.array([_KIND_BASES[k]["alpha"] for k in config.kinds])
    for u in range(config.num_users):
        name = _COLLABORATORS[rng.integers(len(_COLLABORATORS))]
        kinds: dict[str, KindProfile] = {}
        for kind in config.kinds:
            base = _KIND_BASES[kind]
            hour_mu, hour_sigma = base["hour"]
            day_mu, day_sigma = base["day"]
            hour_mu = (hour_mu + int(rng.integers(-3, 4))) % HOURS_PER_DAY
            day_mu = (day_mu + int(rng.integers(-1, 2))) % DAYS_PER_WEEK
            hour_sigma *= rng.uniform(0.75, 1.15)
            day_sigma *= rng.uniform(0.75, 1.15)
            durations, duration_probs = base["durations"]
            kinds[kind] = KindProfile(
                templates=tuple(t.format(name=name) for t in base["templates"]),
                hour_dist=wrapped_normal(HOURS_PER_DAY, hour_mu, hour_sigma),
                day_dist=wrapped_normal(DAYS_PER_WEEK, day_mu, day_sigma),
                durations=durations,
                duration_probs=np.asarray(duration_probs),
            )
        personas.append(
            Persona(
                user_id=f"user{u:03d}",
                kinds=kinds,
                kind_weights=rng.dirichlet(alphas),
                mean_events=config.mean_events_per_week,
                noise_rate=config.noise_rate,
            )
        )
    return personas


# --------------------------------------------------------------------------
# title noise


def inject_text_noise(
    title: str,
    rng: np.random.Generator,
    misspelling_rate: float = 0.0,
    non_english_rate: float = 0.0,
    lexicon: Mapping[str, str] = DEFAULT_LEXICON,
) -> str:
    """Apply at most one corruption: lexicon substitution (word-wise
    translation), adjacent-character transposition, or vowel dropping
    (abbreviation).  Rates of zero leave the title untouched."""
    roll = rng.random()
    if roll < non_english_rate:
        return _substitute(title, lexicon)
    if roll < non_english_rate + misspelling_rate:
        if rng.integers(2) == 0:
            return _transpose(title, rng)
        return _drop_vowels(title, rng)
    return title


def _substitute(title: str, lexicon: Mapping[str, str]) -> str:
    words = []
    for w in title.split(" "):
        repl = lexicon.get(w.lower())
        if repl is None:
            words.append(w)
        elif w[:1].isupper():
            words.append(repl[:1].upper() + repl[1:])
        else:
            words.append(repl)
    return " ".join(words)


def _transpose(title: str, rng: np.random.Generator) -> str:
    words = title.split(" ")
    idx = [i for i, w in enumerate(words) if len(w) >= 2]
    if not idx:
        return title
    i = idx[rng.integers(len(idx))]
    w = words[i]
    j = int(rng.integers(len(w) - 1))
    words[i] = w[:j] + w[j + 1] + w[j] + w[j + 2:]
    return " ".join(words)


def _drop_vowels(title: str, rng: np.random.Generator) -> str:
    words = title.split(" ")
    idx = []
    for i, w in enumerate(words):
        stripped = "".join(c for c in w if c not in VOWELS)
        if stripped != w and len(stripped) >= 2:
            idx.append(i)
    if not idx:
        return title
    i = idx[rng.integers(len(idx))]
    words[i] = "".join(c for c in words[i] if c not in VOWELS)
    return " ".join(words)


# --------------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class GoldLabel:
    """Generating provenance of one event, keyed by uid."""

    uid: str
    persona: str
    kind: str
    from_noise: bool


def _free_starts(occupied: np.ndarray, need: int) -> np.ndarray:
    """Start slots whose whole ``need``-hour window is free and inside
    the week."""
    need = max(need, 1)
    ok = np.zeros(SLOTS_PER_WEEK, dtype=bool)
    windows = sliding_window_view(~occupied, need)
    ok[: windows.shape[0]] = windows.all(axis=1)
    return ok


def _week_mondays(config: SyntheticConfig) -> list[datetime]:
    first = datetime.combine(
        datetime.strptime(
            f"{config.start_year}-W{config.start_week:02d}-1", "%G-W%V-%u"
        ).date(),
        time(),
        tzinfo=timezone.utc,
    )
    return [first + timedelta(weeks=w) for w in range(config.weeks_per_user)]


def gen_dataset(
    config: SyntheticConfig,
    personas: Sequence[Persona] | None = None,
) -> tuple[list[CalendarEvent], list[GoldLabel]]:
    """Sample every user's weeks, then layer shared events on top.

    Events inside a week are registered in sampling order, one minute
    apart, so instance contexts reproduce each draw's history exactly.
    Shared events go to ``round(multi_attendee_rate * personal)`` pairs
    of users, always registered after the personal events of their
    week, at the argmax of the attendees' preference product over slots
    free in both calendars.
    """
    rng = np.random.Generator(np.random.Philox(config.seed))
    if personas is None:
        personas = make_personas(config, rng)
    mondays = _week_mondays(config)

    events: list[CalendarEvent] = []
    gold: list[GoldLabel] = []
    occupancy: dict[tuple[int, int], np.ndarray] = {}

    for p_idx, persona in enumerate(personas):
        names = persona.kind_names
        for w, monday in enumerate(mondays):
            iso = monday.isocalendar()
            occupied = np.zeros(SLOTS_PER_WEEK, dtype=bool)
            occupancy[(p_idx, w)] = occupied
            count = int(np.clip(rng.poisson(persona.mean_events), 1, 20))
            for i in range(count):
                kind = names[rng.choice(len(names), p=persona.kind_weights)]
                prof = persona.kinds[kind]
                dur = prof.durations[rng.choice(len(prof.durations),
                                                p=prof.duration_probs)]
                need = math.ceil(dur / 60)
                from_noise = rng.random() < persona.noise_rate
                ignore_busy = rng.random() < config.overlap_rate
                if ignore_busy:
                    ok = np.zeros(SLOTS_PER_WEEK, dtype=bool)
                    ok[: SLOTS_PER_WEEK - need + 1] = True
                else:
                    ok = _free_starts(occupied, need)
                if not ok.any():
                    break
                if from_noise:
                    p = ok / ok.sum()
                else:
                    p = prof.slot_dist * ok
                    p = p / p.sum()
                slot = int(rng.choice(SLOTS_PER_WEEK, p=p))
                title = prof.templates[rng.integers(len(prof.templates))]
                title = inject_text_noise(
                    title, rng, config.misspelling_rate, config.non_english_rate
                )
                occupied[covered_slots(slot, dur)] = True
                uid = f"{persona.user_id}-{iso.year}w{iso.week:02d}-e{i:02d}"
                events.append(
                    CalendarEvent(
                        uid=uid,
                        title=title,
                        start=slot_to_datetime(slot, iso.year, iso.week),
                        duration_min=int(dur),
                        registered_at=monday - timedelta(days=7) + timedelta(minutes=i),
                        user_id=persona.user_id,
                    )
                )
                gold.append(GoldLabel(uid, persona.user_id, kind, from_noise))

    if config.multi_attendee_rate > 0 and config.num_users > 1:
        n_multi = round(config.multi_attendee_rate * len(events))
        kind = "meeting" if "meeting" in config.kinds else config.kinds[0]
        for j in range(n_multi):
            a = int(rng.integers(config.num_users))
            b = int(rng.integers(config.num_users - 1))
            if b >= a:
                b += 1
            w = int(rng.integers(config.weeks_per_user))
            organizer, partner = personas[a], personas[b]
            prof = organizer.kinds[kind]
            dur = prof.durations[rng.choice(len(prof.durations),
                                            p=prof.duration_probs)]
            need = math.ceil(dur / 60)
            ok = _free_starts(occupancy[(a, w)], need) & _free_starts(
                occupancy[(b, w)], need
            )
            if not ok.any():
                continue
            joint = organizer.kinds[kind].slot_dist * partner.kinds[kind].slot_dist
            slot = int(np.argmax(joint * ok))
            title = prof.templates[rng.integers(len(prof.templates))]
            title = inject_text_noise(
                title, rng, config.misspelling_rate, config.non_english_rate
            )
            monday = mondays[w]
            iso = monday.isocalendar()
            span = covered_slots(slot, dur)
            uid = f"multi-{j:05d}"
            for persona in (organizer, partner):
                events.append(
                    CalendarEvent(
                        uid=uid,
                        title=title,
                        start=slot_to_datetime(slot, iso.year, iso.week),
                        duration_min=int(dur),
                        registered_at=monday - timedelta(days=7)
                        + timedelta(minutes=7000 + j),
                        user_id=persona.user_id,
                        attendee_ids=(organizer.user_id, partner.user_id),
                    )
                )
            occupancy[(a, w)][span] = True
            occupancy[(b, w)][span] = True
            gold.append(GoldLabel(uid, organizer.user_id, kind, False))

    return events, gold


# --------------------------------------------------------------------------
# ICS emission


def _escape(value: str) -> str:
    return (
        value.replace("\\", "\\\\")
        .replace(";", "\\;")
        .replace(",", "\\,")
        .replace("\n", "\\n")
    )


def _fold(line: str) -> list[str]:
    """Split a content line into RFC 5545 folded chunks of <= 75 octets."""
    raw = line.encode("utf-8")
    if len(raw) <= 75:
        return [line]
    out = []
    budget = 75
    chunk = ""
    for ch in line:
        w = len(ch.encode("utf-8"))
        if len(chunk.encode("utf-8")) + w > budget:
            out.append(chunk)
            chunk = " "
            budget = 75
        chunk += ch
    out.append(chunk)
    return out


def _fmt_utc(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y%m%dT%H%M%SZ")


def render_ics(events: Iterable[CalendarEvent]) -> bytes:
    """One calendar as RFC 5545 bytes; parsing it back is lossless."""
    lines = [
        "BEGIN:VCALENDAR",
        "VERSION:2.0",
        "PRODID:-//nesa//synthetic calendars//EN",
    ]
    for e in events:
        lines.append("BEGIN:VEVENT")
        lines.append(f"UID:{_escape(e.uid)}")
        lines.append(f"DTSTAMP:{_fmt_utc(e.registered_at)}")
        lines.append(f"DTSTART:{_fmt_utc(e.start)}")
        lines.append(f"DURATION:PT{e.duration_min}M")
        lines.append(f"SUMMARY:{_escape(e.title)}")
        lines.append(f"ORGANIZER:mailto:{e.user_id}")
        for a in e.attendee_ids:
            lines.append(f"ATTENDEE:mailto:{a}")
        lines.append("END:VEVENT")
    lines.append("END:VCALENDAR")
    folded: list[str] = []
    for line in lines:
        folded.extend(_fold(line))
    return ("\r\n".join(folded) + "\r\n").encode("utf-8")


def emit_ics(events: Iterable[CalendarEvent]) -> dict[str, bytes]:
    """One calendar per user, users in first-appearance order."""
    per_user: dict[str, list[CalendarEvent]] = {}
    for e in events:
        per_user.setdefault(e.user_id, []).append(e)
    return {user: render_ics(evs) for user, evs in per_user.items()}


# --------------------------------------------------------------------------
# gold sidecar


def write_gold(path, gold: Iterable[GoldLabel]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in gold:
            fh.write(
                json.dumps(
                    {
                        "uid": g.uid,
                        "persona": g.persona,
                        "kind": g.kind,
                        "from_noise": g.from_noise,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_gold(path) -> list[GoldLabel]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(
                    GoldLabel(rec["uid"], rec["persona"], rec["kind"],
                              rec["from_noise"])
                )
    return out


# --------------------------------------------------------------------------
# the oracle


def bayes_score_table(
    events: Sequence[CalendarEvent],
    gold: Sequence[GoldLabel],
    personas: Sequence[Persona],
    tz: timezone = timezone.utc,
) -> list[tuple[SchedulingInstance, np.ndarray]]:
    """Each instance paired with the exact conditional it was drawn from.

    Personal events get the noise/preference mixture restricted to the
    slots free when they were sampled; shared events get a point mass
    at the attendees' preference-product argmax.  Exact only when
    overlap injection was off (otherwise dropped events distort the
    reconstructed free sets).
    """
    by_user = {p.user_id: p for p in personas}
    by_uid = {g.uid: g for g in gold}
    weeks = group_by_week(filter_noise(events), tz)
    week_of = {(w.user_id, w.iso_year, w.iso_week): w for w in weeks}

    out = []
    for week in weeks:
        resolved = resolve_overlaps(week)
        occupied = np.zeros(SLOTS_PER_WEEK, dtype=bool)
        for e, inst in zip(resolved.events, build_instances(resolved)):
            g = by_uid[e.uid]
            persona = by_user[g.persona]
            prof = persona.kinds[g.kind]
            need = max(math.ceil(e.duration_min / 60), 1)
            scores = np.zeros(SLOTS_PER_WEEK, dtype=np.float64)
            if len(e.attendee_ids) > 1:
                ok = _free_starts(occupied, need)
                for a in e.attendee_ids:
                    if a == e.user_id:
                        continue
                    other = week_of[(a, week.iso_year, week.iso_week)]
                    busy = np.zeros(SLOTS_PER_WEEK, dtype=bool)
                    for o in other.events:
                        if (o.registered_at, o.uid) < (e.registered_at, e.uid):
                            busy[covered_slots(slot_of(o.start, tz),
                                               o.duration_min)] = True
                    ok &= _free_starts(busy, need)
                joint = np.ones(SLOTS_PER_WEEK, dtype=np.float64)
                for a in e.attendee_ids:
                    joint *= by_user[a].kinds[g.kind].slot_dist
                scores[int(np.argmax(joint * ok))] = 1.0
            else:
                ok = _free_starts(occupied, need)
                pref = prof.slot_dist * ok
                scores = persona.noise_rate * ok / ok.sum()
                scores = scores + (1 - persona.noise_rate) * pref / pref.sum()
            out.append((inst, scores))
            occupied[covered_slots(slot_of(e.start, tz), e.duration_min)] = True
    return out
