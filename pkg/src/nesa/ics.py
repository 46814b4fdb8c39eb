"""iCalendar subset parsing and the week-slot data model.

Events live on a weekly grid of 168 one-hour slots (24*day + hour,
Monday = day 0).  The pipeline is::

    parse_ics -> filter_noise -> group_by_week -> resolve_overlaps
              -> build_instances

Every function here is pure; nothing mutates its inputs.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timedelta, timezone
from typing import Iterable, Sequence
from zoneinfo import ZoneInfo

SLOTS_PER_WEEK = 168
HOURS_PER_DAY = 24
DAYS_PER_WEEK = 7
MINUTES_PER_WEEK = 7 * 24 * 60

#: Title patterns (case-insensitive regex) of auto-generated events.
DEFAULT_GENERATED_PATTERNS: tuple[str, ...] = ("call log", "weather", "weight")

SlotIndex = int


class MalformedComponent(ValueError):
    """Unbalanced or mismatched BEGIN/END lines."""


class MissingRequiredProperty(ValueError):
    """A VEVENT without DTSTART or SUMMARY (skipped, not fatal)."""


class InvalidDateTime(ValueError):
    """A date/time property value that cannot be parsed."""


@dataclass(frozen=True)
class CalendarEvent:
    """One parsed VEVENT."""

    uid: str
    title: str
    start: datetime
    duration_min: int
    registered_at: datetime
    user_id: str
    attendee_ids: tuple[str, ...] = ()
    all_day: bool = False

    def __post_init__(self) -> None:
        if self.duration_min < 0:
            raise ValueError(f"negative duration: {self.duration_min}")
        if self.start.tzinfo is None or self.registered_at.tzinfo is None:
            raise ValueError("start and registered_at must be timezone-aware")
        if self.attendee_ids.count(self.user_id) != 1:
            object.__setattr__(
                self,
                "attendee_ids",
                _with_owner(self.attendee_ids, self.user_id),
            )


def _with_owner(attendees: Sequence[str], owner: str) -> tuple[str, ...]:
    out = [owner]
    out.extend(a for a in attendees if a != owner)
    return tuple(out)


@dataclass(frozen=True)
class WeekGroup:
    """One user's events inside one ISO week, ordered by registration."""

    user_id: str
    iso_year: int
    iso_week: int
    events: tuple[CalendarEvent, ...]
    tz: timezone | ZoneInfo = timezone.utc


@dataclass(frozen=True)
class SchedulingInstance:
    """One supervised problem: place the target event given its context.

    ``context`` holds the events registered strictly before the target,
    each carrying its own start slot, title, duration and user.
    """

    context: tuple[CalendarEvent, ...]
    target_title: str
    target_duration_scaled: float
    target_user: str
    answer: SlotIndex
    iso_year: int
    iso_week: int
    tz: timezone | ZoneInfo = timezone.utc


@dataclass
class ParseStats:
    """Counters for events skipped during parsing."""

    parsed: int = 0
    skipped: int = 0
    reasons: dict[str, int] = field(default_factory=dict)

    def count_skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


# --------------------------------------------------------------------------
# parsing

_DT_UTC = re.compile(r"^(\d{8})T(\d{6})Z$")
_DT_LOCAL = re.compile(r"^(\d{8})T(\d{6})$")
_DT_DATE = re.compile(r"^(\d{8})$")
_DURATION = re.compile(
    r"^([+-])?P(?:(\d+)W)?(?:(\d+)D)?(?:T(?:(\d+)H)?(?:(\d+)M)?(?:(\d+)S)?)?$"
)


def _unfold(text: str) -> list[str]:
    lines: list[str] = []
    for raw in text.replace("\r\n", "\n").replace("\r", "\n").split("\n"):
        if raw.startswith((" ", "\t")) and lines:
            lines[-1] += raw[1:]
        elif raw:
            lines.append(raw)
    return lines


def _unescape(value: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch == "\\" and i + 1 < len(value):
            nxt = value[i + 1]
            if nxt in ("n", "N"):
                out.append("\n")
            elif nxt in ("\\", ",", ";"):
                out.append(nxt)
            else:
                out.append(nxt)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _split_property(line: str) -> tuple[str, dict[str, str], str]:
    """Split ``NAME;PARAM=V;...:value`` into (name, params, raw value)."""
    head, _, value = line.partition(":")
    parts = head.split(";")
    name = parts[0].strip().upper()
    params: dict[str, str] = {}
    for p in parts[1:]:
        k, _, v = p.partition("=")
        params[k.strip().upper()] = v.strip()
    return name, params, value


def _parse_datetime(value: str, params: dict[str, str]) -> tuple[datetime, bool]:
    """Return (aware datetime, is_date).  Floating times are taken as UTC."""
    value = value.strip()
    if params.get("VALUE") == "DATE" or _DT_DATE.match(value):
        m = _DT_DATE.match(value)
        if not m:
            raise InvalidDateTime(f"bad DATE value: {value!r}")
        try:
            d = datetime.strptime(m.group(1), "%Y%m%d")
        except ValueError as exc:
            raise InvalidDateTime(f"bad DATE value: {value!r}") from exc
        tz = _tz_from_params(params)
        return d.replace(tzinfo=tz), True
    m = _DT_UTC.match(value)
    if m:
        try:
            d = datetime.strptime(m.group(1) + m.group(2), "%Y%m%d%H%M%S")
        except ValueError as exc:
            raise InvalidDateTime(f"bad DATE-TIME value: {value!r}") from exc
        return d.replace(tzinfo=timezone.utc), False
    m = _DT_LOCAL.match(value)
    if m:
        try:
            d = datetime.strptime(m.group(1) + m.group(2), "%Y%m%d%H%M%S")
        except ValueError as exc:
            raise InvalidDateTime(f"bad DATE-TIME value: {value!r}") from exc
        return d.replace(tzinfo=_tz_from_params(params)), False
    raise InvalidDateTime(f"unrecognized date/time value: {value!r}")


def _tz_from_params(params: dict[str, str]) -> timezone | ZoneInfo:
    tzid = params.get("TZID")
    if not tzid:
        return timezone.utc
    try:
        return ZoneInfo(tzid)
    except Exception as exc:
        raise InvalidDateTime(f"unknown TZID: {tzid!r}") from exc


def _parse_duration_minutes(value: str) -> int:
    m = _DURATION.match(value.strip())
    if not m or value.strip() in ("P", "PT"):
        raise InvalidDateTime(f"bad DURATION value: {value!r}")
    sign = -1 if m.group(1) == "-" else 1
    weeks, days, hours, minutes, seconds = (int(g or 0) for g in m.groups()[1:])
    total = weeks * 7 * 24 * 60 + days * 24 * 60 + hours * 60 + minutes + seconds // 60
    return sign * total


def _strip_mailto(value: str) -> str:
    value = value.strip()
    if value.lower().startswith("mailto:"):
        value = value[len("mailto:"):]
    return value


def parse_ics(
    data: bytes | str,
    default_user: str | None = None,
    stats: ParseStats | None = None,
) -> list[CalendarEvent]:
    """Parse an RFC 5545 subset into calendar events.

    Handles line folding, escaped text, DTEND/DURATION, VALUE=DATE
    (all-day), TZID parameters, ATTENDEE/ORGANIZER lists and skips
    unknown properties.  Events missing DTSTART or SUMMARY are dropped
    and counted on ``stats`` rather than failing the whole file.
    """
    if isinstance(data, bytes):
        text = data.decode("utf-8-sig")
    else:
        text = data.lstrip("﻿")
    if stats is None:
        stats = ParseStats()

    events: list[CalendarEvent] = []
    stack: list[str] = []
    props: dict[str, tuple[dict[str, str], str]] | None = None
    attendees: list[str] = []
    n_seen = 0

    for line in _unfold(text):
        name, params, value = _split_property(line)
        if name == "BEGIN":
            comp = value.strip().upper()
            stack.append(comp)
            if comp == "VEVENT":
                props = {}
                attendees = []
        elif name == "END":
            comp = value.strip().upper()
            if not stack or stack[-1] != comp:
                raise MalformedComponent(f"END:{comp} does not match open component")
            stack.pop()
            if comp == "VEVENT":
                n_seen += 1
                event = _finish_event(props or {}, attendees, default_user, n_seen, stats)
                if event is not None:
                    events.append(event)
                    stats.parsed += 1
                props = None
        elif props is not None and stack and stack[-1] == "VEVENT":
            if name == "ATTENDEE":
                attendees.append(_strip_mailto(value))
            else:
                props[name] = (params, value)

    if stack:
        raise MalformedComponent(f"unclosed component(s): {stack}")
    return events


def _finish_event(
    props: dict[str, tuple[dict[str, str], str]],
    attendees: list[str],
    default_user: str | None,
    index: int,
    stats: ParseStats,
) -> CalendarEvent | None:
    if "DTSTART" not in props:
        stats.count_skip("missing DTSTART")
        return None
    if "SUMMARY" not in props:
        stats.count_skip("missing SUMMARY")
        return None

    start_params, start_value = props["DTSTART"]
    start, all_day = _parse_datetime(start_value, start_params)
    title = _unescape(props["SUMMARY"][1])

    if "DTEND" in props:
        end_params, end_value = props["DTEND"]
        end, _ = _parse_datetime(end_value, end_params)
        duration_min = max(0, int((end - start).total_seconds() // 60))
    elif "DURATION" in props:
        duration_min = max(0, _parse_duration_minutes(props["DURATION"][1]))
    else:
        duration_min = 1440 if all_day else 0

    if "DTSTAMP" in props:
        registered, _ = _parse_datetime(props["DTSTAMP"][1], props["DTSTAMP"][0])
    elif "CREATED" in props:
        registered, _ = _parse_datetime(props["CREATED"][1], props["CREATED"][0])
    else:
        registered = start

    if "ORGANIZER" in props:
        user = _strip_mailto(props["ORGANIZER"][1])
    elif default_user:
        user = default_user
    elif attendees:
        user = attendees[0]
    else:
        user = "owner"

    uid = _unescape(props["UID"][1]) if "UID" in props else f"event-{index}"

    return CalendarEvent(
        uid=uid,
        title=title,
        start=start,
        duration_min=duration_min,
        registered_at=registered,
        user_id=user,
        attendee_ids=tuple(dict.fromkeys(attendees)),
        all_day=all_day,
    )


# --------------------------------------------------------------------------
# filtering and the weekly grid

def filter_noise(
    events: Iterable[CalendarEvent],
    generated_title_patterns: Sequence[str] = DEFAULT_GENERATED_PATTERNS,
) -> list[CalendarEvent]:
    """Drop all-day events, blank titles and auto-generated titles.

    Patterns are case-insensitive regexes matched anywhere in the title.
    Order is preserved and the pass is idempotent.
    """
    compiled = [re.compile(p, re.IGNORECASE) for p in generated_title_patterns]
    out = []
    for e in events:
        if e.all_day:
            continue
        if not e.title.strip():
            continue
        if any(p.search(e.title) for p in compiled):
            continue
        out.append(e)
    return out


def slot_of(start: datetime, tz: timezone | ZoneInfo = timezone.utc) -> SlotIndex:
    """Hour-of-week index: 24 * weekday + hour in ``tz``, floored."""
    local = start.astimezone(tz)
    return local.weekday() * HOURS_PER_DAY + local.hour


def slot_to_day_hour(slot: SlotIndex) -> tuple[int, int]:
    if not 0 <= slot < SLOTS_PER_WEEK:
        raise ValueError(f"slot out of range: {slot}")
    return slot // HOURS_PER_DAY, slot % HOURS_PER_DAY


def slot_to_datetime(
    slot: SlotIndex,
    iso_year: int,
    iso_week: int,
    tz: timezone | ZoneInfo = timezone.utc,
) -> datetime:
    """Canonical timestamp of a slot: top of the hour in the given ISO week."""
    day, hour = slot_to_day_hour(slot)
    monday = date.fromisocalendar(iso_year, iso_week, 1)
    return datetime.combine(monday, time(hour=hour), tzinfo=tz) + timedelta(days=day)


def scale_duration(duration_min: int) -> float:
    """Duration as a fraction of one week, clamped to [0, 1]."""
    if duration_min < 0:
        raise ValueError(f"negative duration: {duration_min}")
    return min(1.0, duration_min / MINUTES_PER_WEEK)


def covered_slots(slot: SlotIndex, duration_min: int) -> range:
    """Slots occupied by an event: ceil(hours) slots from its start,
    clipped to the week.  A zero-minute event covers nothing."""
    n = math.ceil(duration_min / 60)
    return range(slot, min(SLOTS_PER_WEEK, slot + n))


def group_by_week(
    events: Iterable[CalendarEvent],
    tz: timezone | ZoneInfo = timezone.utc,
) -> list[WeekGroup]:
    """Partition events by (user, ISO year, ISO week of start), each group
    sorted by registration time with uid as the tie-break."""
    groups: dict[tuple[str, int, int], list[CalendarEvent]] = {}
    for e in events:
        local = e.start.astimezone(tz)
        iso = local.isocalendar()
        groups.setdefault((e.user_id, iso.year, iso.week), []).append(e)
    out = []
    for (user, year, week), evs in sorted(groups.items()):
        evs.sort(key=lambda e: (e.registered_at, e.uid))
        out.append(WeekGroup(user_id=user, iso_year=year, iso_week=week,
                             events=tuple(evs), tz=tz))
    return out


def resolve_overlaps(week: WeekGroup) -> WeekGroup:
    """Keep one event per contested hour range, preferring the one
    registered later."""
    kept: list[CalendarEvent] = []
    for e in week.events:
        span = set(covered_slots(slot_of(e.start, week.tz), e.duration_min))
        kept = [
            k for k in kept
            if not span & set(covered_slots(slot_of(k.start, week.tz), k.duration_min))
        ]
        kept.append(e)
    return replace(week, events=tuple(kept))


def build_instances(week: WeekGroup) -> list[SchedulingInstance]:
    """One scheduling problem per event: the i-th instance's context is
    everything registered before event i in the same week."""
    instances = []
    for i, e in enumerate(week.events):
        instances.append(
            SchedulingInstance(
                context=week.events[:i],
                target_title=e.title,
                target_duration_scaled=scale_duration(e.duration_min),
                target_user=e.user_id,
                answer=slot_of(e.start, week.tz),
                iso_year=week.iso_year,
                iso_week=week.iso_week,
                tz=week.tz,
            )
        )
    return instances


# --------------------------------------------------------------------------
# line-delimited instance records (the cross-module dataset format)

def instance_to_record(inst: SchedulingInstance) -> dict:
    """Fixed-order record for one instance; see ``record_to_instance``."""
    return {
        "user": inst.target_user,
        "iso_year": inst.iso_year,
        "iso_week": inst.iso_week,
        "target_title": inst.target_title,
        "target_duration_scaled": inst.target_duration_scaled,
        "answer_slot": inst.answer,
        "context": [
            {
                "slot": slot_of(e.start, inst.tz),
                "duration_scaled": scale_duration(e.duration_min),
                "title": e.title,
                "user": e.user_id,
            }
            for e in inst.context
        ],
    }


def record_to_instance(rec: dict) -> SchedulingInstance:
    """Rebuild an instance from its record.  Context timestamps are
    reconstructed canonically from their slots (UTC)."""
    year, week = int(rec["iso_year"]), int(rec["iso_week"])
    context = []
    base_reg = slot_to_datetime(0, year, week) - timedelta(days=7)
    for i, c in enumerate(rec["context"]):
        start = slot_to_datetime(int(c["slot"]), year, week)
        context.append(
            CalendarEvent(
                uid=f"ctx-{i}",
                title=c["title"],
                start=start,
                duration_min=round(float(c["duration_scaled"]) * MINUTES_PER_WEEK),
                registered_at=base_reg + timedelta(minutes=i),
                user_id=c["user"],
            )
        )
    return SchedulingInstance(
        context=tuple(context),
        target_title=rec["target_title"],
        target_duration_scaled=float(rec["target_duration_scaled"]),
        target_user=rec["user"],
        answer=int(rec["answer_slot"]),
        iso_year=year,
        iso_week=week,
    )


def write_instances(path, instances: Iterable[SchedulingInstance]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(json.dumps(instance_to_record(inst), ensure_ascii=False) + "\n")


def read_instances(path) -> list[SchedulingInstance]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(record_to_instance(json.loads(line)))
    return out


def instances_from_events(
    events: Iterable[CalendarEvent],
    tz: timezone | ZoneInfo = timezone.utc,
    generated_title_patterns: Sequence[str] = DEFAULT_GENERATED_PATTERNS,
) -> list[SchedulingInstance]:
    """Full pipeline: filter, group, resolve overlaps, emit instances."""
    instances: list[SchedulingInstance] = []
    for week in group_by_week(filter_noise(events, generated_title_patterns), tz):
        instances.extend(build_instances(resolve_overlaps(week)))
    return instances
