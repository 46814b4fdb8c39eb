"""Walk one calendar file from raw bytes to scheduling instances.

Run from the repository root:

    python3 demos/parse_and_group.py
"""

from nesa.ics import (
    ParseStats,
    build_instances,
    group_by_week,
    parse_ics,
    resolve_overlaps,
    slot_of,
    slot_to_day_hour,
)

RAW = b"""BEGIN:VCALENDAR\r
VERSION:2.0\r
BEGIN:VEVENT\r
UID:a1\r
DTSTAMP:20240304T080000Z\r
DTSTART:20240304T090000Z\r
DTEND:20240304T100000Z\r
SUMMARY:Weekly planning\\, all hands\r
ORGANIZER:mailto:dana@example.org\r
END:VEVENT\r
BEGIN:VEVENT\r
UID:a2\r
DTSTAMP:20240304T081500Z\r
DTSTART:20240305T120000Z\r
DURATION:PT90M\r
SUMMARY:Lunch with the platform te\r
 am\r
ORGANIZER:mailto:dana@example.org\r
END:VEVENT\r
BEGIN:VEVENT\r
UID:broken\r
DTSTAMP:20240304T082000Z\r
SUMMARY:No start time\r
END:VEVENT\r
BEGIN:VEVENT\r
UID:a3\r
DTSTAMP:20240311T070000Z\r
DTSTART:20240312T150000Z\r
DTEND:20240312T160000Z\r
SUMMARY:1:1 with Sam\r
ORGANIZER:mailto:dana@example.org\r
END:VEVENT\r
END:VCALENDAR\r
"""


def main() -> None:
    stats = ParseStats()
    events = parse_ics(RAW, stats=stats)
    print(f"parsed {stats.parsed} events, skipped {stats.skipped} "
          f"({stats.reasons})")
    for e in events:
        day, hour = slot_to_day_hour(slot_of(e.start))
        print(f"  {e.uid}: {e.title!r} day={day} hour={hour} "
              f"{e.duration_min} min")

    # One group per (user, ISO week); the folded SUMMARY and the escaped
    # comma came back as plain text above.
    weeks = group_by_week(events)
    print(f"\n{len(weeks)} week groups:")
    for week in weeks:
        print(f"  {week.user_id} {week.iso_year}-W{week.iso_week:02d}: "
              f"{len(week.events)} events")

    # Each event becomes one scheduling problem whose context is every
    # event registered before it in the same week.
    print("\ninstances (context size -> answer slot):")
    for week in weeks:
        for inst in build_instances(resolve_overlaps(week)):
            print(f"  {inst.target_title!r}: {len(inst.context)} prior "
                  f"events -> slot {inst.answer}")


if __name__ == "__main__":
    main()
