"""Schedule one meeting for two people through the running service.

Builds two synthetic calendars, starts the HTTP service in a thread
with a minimal availability scorer (an attendee's free hours, weighted
toward the working day), and asks for a shared slot.  Group scores are sums of the
per-attendee probabilities, so the top suggestions dodge both
calendars without any extra logic.

Run from the repository root:

    python3 demos/multi_attendee.py
"""

import json
import urllib.request

import numpy as np

from nesa import datagen as dg
from nesa import service as sv
from nesa.ics import SLOTS_PER_WEEK, covered_slots, slot_of

DAYS = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"]


def availability_scorer(instance) -> np.ndarray:
    busy = np.zeros(SLOTS_PER_WEEK, dtype=bool)
    for e in instance.context:
        for s in covered_slots(slot_of(e.start), e.duration_min):
            busy[s] = True
    slots = np.arange(SLOTS_PER_WEEK)
    workhour = (slots // 24 < 5) & (slots % 24 >= 9) & (slots % 24 < 17)
    p = np.where(busy, 1e-9, np.where(workhour, 4.0, 1.0))
    return p / p.sum()


def main() -> None:
    config = dg.SyntheticConfig(seed=9, num_users=2, weeks_per_user=1,
                                mean_events_per_week=12)
    events, _ = dg.gen_dataset(config)
    users = sorted({e.user_id for e in events})
    year, week, _ = events[0].start.isocalendar()

    store = sv.CalendarStore()
    store.preload(events)
    service = sv.CalendarService(scorer=availability_scorer,
                                 checkpoint_hash="demo", store=store)
    httpd, thread = sv.serve_in_thread(service)
    base = f"http://127.0.0.1:{httpd.server_address[1]}"
    try:
        body = json.dumps({
            "user": users[0], "attendees": users, "title": "joint review",
            "duration_min": 60, "k": 5, "iso_year": year, "iso_week": week,
        }).encode("utf-8")
        req = urllib.request.Request(f"{base}/api/suggest", data=body,
                                     method="POST")
        req.add_header("Content-Type", "application/json")
        with urllib.request.urlopen(req, timeout=10) as resp:
            got = json.loads(resp.read().decode("utf-8"))
    finally:
        httpd.shutdown()
        thread.join(timeout=10)

    busy = {u: np.zeros(SLOTS_PER_WEEK, dtype=bool) for u in users}
    for e in events:
        for s in covered_slots(slot_of(e.start), e.duration_min):
            busy[e.user_id][s] = True
    print(f"calendars for {year}-W{week:02d} "
          f"({users[0]}: {int(busy[users[0]].sum())} busy hours, "
          f"{users[1]}: {int(busy[users[1]].sum())} busy hours)")

    top = {s["slot"] for s in got["slots"]}
    print("\n     " + "".join(f"{h:>2d}"[-1] for h in range(24)))
    for d, name in enumerate(DAYS):
        row = []
        for h in range(24):
            s = d * 24 + h
            both = busy[users[0]][s], busy[users[1]][s]
            mark = "*" if s in top else ("#" if all(both)
                                         else "x" if any(both) else ".")
            row.append(mark)
        print(f"  {name}  {''.join(row)}")
    print("\n  * suggested   # both busy   x one busy   . free")

    print("\ntop shared slots (score = sum over attendees):")
    for s in got["slots"]:
        print(f"  {DAYS[s['day']]} {s['hour']:02d}:00  "
              f"slot {s['slot']:3d}  score {s['score']:.6f}")


if __name__ == "__main__":
    main()
