"""HTTP facade over a trained scorer and an in-memory calendar store.

The model is read-only here: requests score against loaded parameters
and never touch training code.  Calendar state lives in memory, guarded
by one lock per (user, week) so concurrent registrations serialize
without blocking unrelated weeks; an optional append-only journal makes
the store survive restarts.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .evaluate import MultiAttendeeRequest, multi_attendee_suggest
from .ics import (
    CalendarEvent,
    SLOTS_PER_WEEK,
    SchedulingInstance,
    covered_slots,
    scale_duration,
    slot_of,
    slot_to_datetime,
    slot_to_day_hour,
)

__all__ = [
    "BadRequest", "UnknownResource", "SlotConflict", "ModelUnavailable",
    "CalendarStore", "CalendarService", "serve_in_thread", "run_server",
]

Scorer = Callable[[SchedulingInstance], np.ndarray]

WeekKey = tuple[str, int, int]


class BadRequest(ValueError):
    """Malformed request body or parameters."""


class UnknownResource(KeyError):
    """User or event uid the store has never seen."""


class SlotConflict(RuntimeError):
    """Strict mode refused to double-book a slot."""


class ModelUnavailable(RuntimeError):
    """Suggestion requested with no checkpoint loaded."""


# --------------------------------------------------------------------------
# store


class CalendarStore:
    """Per-user-week event lists with single-writer mutation.

    A master lock guards the maps themselves; each week has its own lock
    for event mutation, so registrations into one week serialize while
    other weeks proceed.  The optional journal is an append-only JSONL
    file replayed on construction.
    """

    def __init__(self, journal_path=None):
        self._master = threading.Lock()
        self._week_locks: dict[WeekKey, threading.Lock] = {}
        self._weeks: dict[WeekKey, list[CalendarEvent]] = {}
        self._uid_to_week: dict[str, WeekKey] = {}
        self._users: set[str] = set()
        self._counter = 0
        self._journal_path = journal_path
        self._journal_lock = threading.Lock()
        if journal_path is not None:
            self._replay(journal_path)

    def _lock_for(self, key: WeekKey) -> threading.Lock:
        with self._master:
            return self._week_locks.setdefault(key, threading.Lock())

    def _next_uid(self) -> str:
        with self._master:
            self._counter += 1
            return f"evt-{self._counter:08d}"

    def _journal_write(self, record: dict) -> None:
        if self._journal_path is None:
            return
        with self._journal_lock:
            with open(self._journal_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")

    def _replay(self, path) -> None:
        try:
            fh = open(path, encoding="utf-8")
        except FileNotFoundError:
            return
        with fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec["op"] == "register":
                    self._insert(
                        rec["user"], rec["title"], rec["duration_min"],
                        rec["slot"], rec["iso_year"], rec["iso_week"],
                        uid=rec["uid"],
                        registered_at=datetime.fromisoformat(rec["registered_at"]),
                        strict=False,
                    )
                    # keep generated uids ahead of anything replayed
                    m = re.fullmatch(r"evt-(\d+)", rec["uid"])
                    if m:
                        with self._master:
                            self._counter = max(self._counter, int(m.group(1)))
                elif rec["op"] == "delete":
                    try:
                        self._remove(rec["uid"])
                    except UnknownResource:
                        pass

    def preload(self, events: Iterable[CalendarEvent]) -> int:
        """Seed the store from parsed calendars (not journaled)."""
        n = 0
        for e in events:
            key = (e.user_id, *e.start.isocalendar()[:2])
            lock = self._lock_for(key)
            with lock:
                with self._master:
                    self._weeks.setdefault(key, []).append(e)
                    self._uid_to_week[e.uid] = key
                    self._users.add(e.user_id)
            n += 1
        return n

    def _insert(self, user: str, title: str, duration_min: int, slot: int,
                iso_year: int, iso_week: int, uid: str | None,
                registered_at: datetime | None, strict: bool) -> CalendarEvent:
        key = (user, iso_year, iso_week)
        lock = self._lock_for(key)
        with lock:
            events = self._weeks.setdefault(key, [])
            if strict:
                wanted = set(covered_slots(slot, duration_min))
                clashes = [
                    e.uid for e in events
                    if wanted & set(covered_slots(slot_of(e.start), e.duration_min))
                ]
                if clashes:
                    raise SlotConflict(
                        f"slot {slot} conflicts with {', '.join(sorted(clashes))}")
            event = CalendarEvent(
                uid=uid if uid is not None else self._next_uid(),
                title=title,
                start=slot_to_datetime(slot, iso_year, iso_week),
                duration_min=duration_min,
                registered_at=registered_at or datetime.now(timezone.utc),
                user_id=user,
            )
            events.append(event)
            with self._master:
                self._uid_to_week[event.uid] = key
                self._users.add(user)
        return event

    def register(self, user: str, title: str, duration_min: int, slot: int,
                 iso_year: int, iso_week: int,
                 strict: bool = False) -> CalendarEvent:
        event = self._insert(user, title, duration_min, slot, iso_year,
                             iso_week, uid=None, registered_at=None,
                             strict=strict)
        self._journal_write({
            "op": "register", "uid": event.uid, "user": user, "title": title,
            "duration_min": duration_min, "slot": slot,
            "iso_year": iso_year, "iso_week": iso_week,
            "registered_at": event.registered_at.isoformat(),
        })
        return event

    def _remove(self, uid: str) -> WeekKey:
        with self._master:
            key = self._uid_to_week.get(uid)
        if key is None:
            raise UnknownResource(f"no event {uid!r}")
        lock = self._lock_for(key)
        with lock:
            events = self._weeks.get(key, [])
            remaining = [e for e in events if e.uid != uid]
            if len(remaining) == len(events):
                raise UnknownResource(f"no event {uid!r}")
            self._weeks[key] = remaining
            with self._master:
                self._uid_to_week.pop(uid, None)
        return key

    def delete(self, uid: str) -> WeekKey:
        key = self._remove(uid)
        self._journal_write({"op": "delete", "uid": uid})
        return key

    def week_events(self, user: str, iso_year: int,
                    iso_week: int) -> list[CalendarEvent]:
        key = (user, iso_year, iso_week)
        lock = self._lock_for(key)
        with lock:
            return list(self._weeks.get(key, []))

    def knows_user(self, user: str) -> bool:
        with self._master:
            return user in self._users


# --------------------------------------------------------------------------
# service


def _event_record(event: CalendarEvent) -> dict:
    slot = slot_of(event.start)
    day, hour = slot_to_day_hour(slot)
    return {
        "uid": event.uid,
        "title": event.title,
        "slot": int(slot),
        "day": day,
        "hour": hour,
        "duration_min": event.duration_min,
        "user": event.user_id,
    }


def _field(body: Mapping, name: str, kind: type, optional: bool = False):
    value = body.get(name)
    if value is None:
        if optional:
            return None
        raise BadRequest(f"missing field {name!r}")
    if kind is int and isinstance(value, bool):
        raise BadRequest(f"field {name!r} must be an integer")
    if not isinstance(value, kind):
        raise BadRequest(f"field {name!r} must be {kind.__name__}")
    return value


@dataclass
class CalendarService:
    """Request-level logic, independent of the HTTP plumbing."""

    scorer: Scorer | None = None
    checkpoint_hash: str | None = None
    strict: bool = False
    default_week: tuple[int, int] | None = None
    store: CalendarStore | None = None

    def __post_init__(self):
        if self.store is None:
            self.store = CalendarStore()
        if self.default_week is None:
            now = datetime.now(timezone.utc).isocalendar()
            self.default_week = (now[0], now[1])

    def _week_of(self, body: Mapping) -> tuple[int, int]:
        year = _field(body, "iso_year", int, optional=True)
        week = _field(body, "iso_week", int, optional=True)
        if (year is None) != (week is None):
            raise BadRequest("iso_year and iso_week go together")
        if year is None:
            return self.default_week
        try:
            slot_to_datetime(0, year, week)
        except ValueError as err:
            raise BadRequest(f"invalid week {year}-W{week}") from err
        return year, week

    def suggest(self, body: Mapping) -> dict:
        if self.scorer is None:
            raise ModelUnavailable("no checkpoint loaded")
        user = _field(body, "user", str)
        title = _field(body, "title", str)
        duration_min = _field(body, "duration_min", int)
        if duration_min <= 0:
            raise BadRequest("duration_min must be positive")
        attendees = _field(body, "attendees", list, optional=True)
        if attendees is not None:
            if not all(isinstance(a, str) for a in attendees):
                raise BadRequest("attendees must be strings")
        k = _field(body, "k", int, optional=True)
        if k is None:
            k = 5
        if not 1 <= k <= SLOTS_PER_WEEK:
            raise BadRequest(f"k out of range: {k}")
        year, week = self._week_of(body)

        group = tuple(attendees) if attendees else (user,)
        contexts = {
            a: tuple(self.store.week_events(a, year, week)) for a in set(group)
        }
        request = MultiAttendeeRequest(
            title=title,
            duration_scaled=scale_duration(duration_min),
            attendees=group,
            contexts=contexts,
            iso_year=year,
            iso_week=week,
        )
        ranked = multi_attendee_suggest(request, self.scorer, SLOTS_PER_WEEK)
        scores = np.zeros(SLOTS_PER_WEEK, dtype=np.float64)
        for slot, score in ranked:
            scores[slot] = score
        slots = [
            {"slot": slot, "day": slot // 24, "hour": slot % 24,
             "score": score}
            for slot, score in ranked[:k]
        ]
        heatmap = scores.reshape(7, 24).tolist()
        return {"slots": slots, "heatmap": heatmap,
                "iso_year": year, "iso_week": week}

    def register(self, body: Mapping) -> dict:
        user = _field(body, "user", str)
        title = _field(body, "title", str)
        duration_min = _field(body, "duration_min", int)
        slot = _field(body, "slot", int)
        if duration_min <= 0:
            raise BadRequest("duration_min must be positive")
        if not 0 <= slot < SLOTS_PER_WEEK:
            raise BadRequest(f"slot out of range: {slot}")
        year, week = self._week_of(body)
        event = self.store.register(user, title, duration_min, slot, year,
                                    week, strict=self.strict)
        view = self.week_view(user, year, week)
        view["registered"] = _event_record(event)
        return view

    def week_view(self, user: str, iso_year: int, iso_week: int) -> dict:
        events = self.store.week_events(user, iso_year, iso_week)
        events.sort(key=lambda e: (slot_of(e.start), e.uid))
        return {
            "user": user,
            "iso_year": iso_year,
            "iso_week": iso_week,
            "events": [_event_record(e) for e in events],
        }

    def calendar(self, user: str, iso_year: int, iso_week: int) -> dict:
        if not self.store.knows_user(user):
            raise UnknownResource(f"no calendar for user {user!r}")
        return self.week_view(user, iso_year, iso_week)

    def delete(self, uid: str) -> dict:
        user, year, week = self.store.delete(uid)
        view = self.week_view(user, year, week)
        view["deleted"] = uid
        return view

    def health(self) -> dict:
        return {
            "status": "ok",
            "version": __version__,
            "checkpoint": self.checkpoint_hash,
        }


# --------------------------------------------------------------------------
# http plumbing

_CALENDAR_ROUTE = re.compile(r"/api/calendar/([^/]+)/(\d+)/(\d+)$")
_EVENT_ROUTE = re.compile(r"/api/events/([^/]+)$")


def _make_handler(service: CalendarService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):
            pass

        def _send(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _error(self, status: int, message: str) -> None:
            self._send(status, {"error": message})

        def _body(self) -> Mapping:
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length) if length else b""
            try:
                body = json.loads(raw or b"{}")
            except (json.JSONDecodeError, UnicodeDecodeError) as err:
                raise BadRequest(f"invalid JSON body: {err}") from err
            if not isinstance(body, dict):
                raise BadRequest("body must be a JSON object")
            return body

        def _dispatch(self, fn) -> None:
            try:
                self._send(200, fn())
            except BadRequest as err:
                self._error(400, str(err))
            except UnknownResource as err:
                self._error(404, str(err.args[0]) if err.args else "not found")
            except SlotConflict as err:
                self._error(409, str(err))
            except ModelUnavailable as err:
                self._error(503, str(err))

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods",
                             "GET, POST, DELETE, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            if self.path == "/api/health":
                self._dispatch(service.health)
                return
            m = _CALENDAR_ROUTE.match(self.path)
            if m:
                user, year, week = m.group(1), int(m.group(2)), int(m.group(3))
                self._dispatch(lambda: service.calendar(user, year, week))
                return
            self._error(404, f"unknown endpoint {self.path}")

        def do_POST(self):
            try:
                body = self._body()
            except BadRequest as err:
                self._error(400, str(err))
                return
            if self.path == "/api/suggest":
                self._dispatch(lambda: service.suggest(body))
            elif self.path == "/api/events":
                self._dispatch(lambda: service.register(body))
            else:
                self._error(404, f"unknown endpoint {self.path}")

        def do_DELETE(self):
            m = _EVENT_ROUTE.match(self.path)
            if m:
                uid = m.group(1)
                self._dispatch(lambda: service.delete(uid))
                return
            self._error(404, f"unknown endpoint {self.path}")

    return Handler


def serve_in_thread(
    service: CalendarService, port: int = 0
) -> tuple[ThreadingHTTPServer, threading.Thread]:
    """Start the service on a daemon thread; port 0 picks a free one."""
    httpd = ThreadingHTTPServer(("127.0.0.1", port), _make_handler(service))
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    return httpd, thread


def run_server(service: CalendarService, port: int,
               log: Callable[[str], None] = print) -> None:
    """Blocking server loop for the command line."""
    httpd = ThreadingHTTPServer(("0.0.0.0", port), _make_handler(service))
    log(f"serving on port {httpd.server_address[1]}")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
