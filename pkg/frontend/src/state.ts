/** Week-view state as a pure function of service responses.
 *
 * The client never scores anything: heatmap cells are the service's
 * numbers divided by one normalization constant (the max cell), so the
 * brightest cell is always full intensity and multiplying every score
 * by `normConstant` reproduces the raw response exactly. */

import type { EventRecord, SuggestResponse } from "./api.js";

export const DAYS = 7;
export const HOURS = 24;
export const SLOTS = DAYS * HOURS;
export const DAY_NAMES = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

export interface Cell {
  occupied: boolean;
  title: string | null;
  score: number; // normalized to [0, 1] for rendering
  starred: boolean; // among the service's top-k slots
}

export interface Pending {
  title: string;
  durationMin: number;
  attendees: string[];
}

export interface WeekView {
  user: string;
  isoYear: number;
  isoWeek: number;
  cells: Cell[]; // index = day * 24 + hour, Monday first
  normConstant: number; // raw score = cell.score * normConstant
  pending: Pending;
  error: string | null;
  checkpoint: string | null;
}

export function emptyCells(): Cell[] {
  return Array.from({ length: SLOTS }, () => ({
    occupied: false,
    title: null,
    score: 0,
    starred: false,
  }));
}

export function initialView(user: string, isoYear: number, isoWeek: number): WeekView {
  return {
    user,
    isoYear,
    isoWeek,
    cells: emptyCells(),
    normConstant: 0,
    pending: { title: "", durationMin: 60, attendees: [] },
    error: null,
    checkpoint: null,
  };
}

/** Slots an event occupies: ceil(hours) from its start, clipped to the week. */
export function coveredSlots(slot: number, durationMin: number): number[] {
  const n = Math.ceil(durationMin / 60);
  const out: number[] = [];
  for (let s = slot; s < Math.min(SLOTS, slot + n); s++) out.push(s);
  return out;
}

/** Rebuild occupancy from a week's events, keeping the heatmap. */
export function withEvents(view: WeekView, events: EventRecord[]): WeekView {
  const cells = view.cells.map((c) => ({ ...c, occupied: false, title: null as string | null }));
  for (const event of events) {
    for (const s of coveredSlots(event.slot, event.duration_min)) {
      const cell = cells[s];
      if (cell === undefined) continue;
      cell.occupied = true;
      if (cell.title === null) cell.title = event.title;
    }
  }
  return { ...view, cells };
}

/** Overlay a suggestion response. The only arithmetic is one division
 * by the max cell; a zero heatmap renders dark with constant 0. */
export function withHeatmap(view: WeekView, resp: SuggestResponse): WeekView {
  const flat: number[] = [];
  for (const row of resp.heatmap) for (const v of row) flat.push(v);
  const max = flat.reduce((a, b) => Math.max(a, b), 0);
  const starred = new Set(resp.slots.map((s) => s.slot));
  const cells = view.cells.map((cell, s) => ({
    ...cell,
    score: max > 0 ? (flat[s] ?? 0) / max : 0,
    starred: starred.has(s),
  }));
  return {
    ...view,
    cells,
    normConstant: max,
    isoYear: resp.iso_year,
    isoWeek: resp.iso_week,
  };
}

export function clearHeatmap(view: WeekView): WeekView {
  const cells = view.cells.map((cell) => ({ ...cell, score: 0, starred: false }));
  return { ...view, cells, normConstant: 0 };
}

export function withError(view: WeekView, message: string | null): WeekView {
  return { ...view, error: message };
}

/** Last-write-wins over in-flight requests: only the most recently
 * issued sequence number may apply its response. */
export class LatestGate {
  private seq = 0;

  issue(): number {
    return ++this.seq;
  }

  isCurrent(seq: number): boolean {
    return seq === this.seq;
  }
}

/** ISO week of a date (year, week), Monday-based. */
export function isoWeekOf(date: Date): { isoYear: number; isoWeek: number } {
  const d = new Date(Date.UTC(date.getFullYear(), date.getMonth(), date.getDate()));
  const day = d.getUTCDay() || 7; // Monday 1 .. Sunday 7
  d.setUTCDate(d.getUTCDate() + 4 - day); // nearest Thursday decides the year
  const isoYear = d.getUTCFullYear();
  const jan1 = new Date(Date.UTC(isoYear, 0, 1));
  const isoWeek = Math.ceil(((d.getTime() - jan1.getTime()) / 86400000 + 1) / 7);
  return { isoYear, isoWeek };
}
