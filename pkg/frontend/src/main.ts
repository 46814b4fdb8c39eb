/** Controller: wires the form, the HTTP client and the grid together,
 * closing the suggest -> accept -> re-suggest loop.
 *
 * Responses apply last-write-wins: each suggestion request takes a
 * sequence number and only the most recent one may update the view.
 * A 409 on accept means the grid was stale; the week is refetched. */

import { Api, ApiError } from "./api.js";
import type { SuggestResponse } from "./api.js";
import * as st from "./state.js";
import { render, type Handlers } from "./view.js";

export interface AppOptions {
  isoYear?: number;
  isoWeek?: number;
  k?: number;
}

export class App {
  view: st.WeekView;
  /** Raw body of the last applied suggestion, untouched by rendering. */
  lastSuggest: SuggestResponse | null = null;
  private readonly gate = new st.LatestGate();
  private readonly k: number;

  private readonly handlers: Handlers = {
    onSuggest: () => void this.requestSuggestion(),
    onAccept: (slot) => void this.acceptSlot(slot),
    onSwitchUser: (user) => void this.switchUser(user),
    onAddAttendee: (name) => this.addAttendee(name),
    onRemoveAttendee: (name) => this.removeAttendee(name),
    onTitleChange: (value) => this.setPending({ title: value }),
    onDurationChange: (value) => this.setPending({ durationMin: value }),
  };

  constructor(
    readonly root: HTMLElement,
    readonly api: Api,
    user: string,
    opts: AppOptions = {},
  ) {
    const now = st.isoWeekOf(new Date());
    this.view = st.initialView(
      user,
      opts.isoYear ?? now.isoYear,
      opts.isoWeek ?? now.isoWeek,
    );
    this.k = opts.k ?? 5;
  }

  private commit(view: st.WeekView): void {
    this.view = view;
    render(this.root, this.view, this.handlers);
  }

  private fail(err: unknown): void {
    const message = err instanceof Error ? err.message : String(err);
    this.commit(st.withError(this.view, message));
  }

  async start(): Promise<void> {
    try {
      const health = await this.api.health();
      this.view = { ...this.view, checkpoint: health.checkpoint };
    } catch (err) {
      this.fail(err);
      return;
    }
    await this.loadCalendar();
  }

  /** Rebuild occupancy from the GET endpoint alone. */
  async loadCalendar(): Promise<void> {
    try {
      const week = await this.api.calendar(
        this.view.user,
        this.view.isoYear,
        this.view.isoWeek,
      );
      this.commit(st.withError(st.withEvents(this.view, week.events), null));
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        // the service only learns a user on their first write
        this.commit(st.withError(st.withEvents(this.view, []), null));
        return;
      }
      this.fail(err);
    }
  }

  async switchUser(user: string): Promise<void> {
    this.view = {
      ...st.initialView(user, this.view.isoYear, this.view.isoWeek),
      pending: this.view.pending,
      checkpoint: this.view.checkpoint,
    };
    this.lastSuggest = null;
    await this.loadCalendar();
  }

  async requestSuggestion(): Promise<void> {
    const pending = this.view.pending;
    if (!pending.title.trim()) {
      this.commit(st.withError(this.view, "enter a title first"));
      return;
    }
    const seq = this.gate.issue();
    try {
      const resp = await this.api.suggest({
        user: this.view.user,
        title: pending.title,
        duration_min: pending.durationMin,
        attendees: pending.attendees.length > 0 ? pending.attendees : undefined,
        k: this.k,
        iso_year: this.view.isoYear,
        iso_week: this.view.isoWeek,
      });
      if (!this.gate.isCurrent(seq)) return; // a newer request owns the view
      this.lastSuggest = resp;
      this.commit(st.withError(st.withHeatmap(this.view, resp), null));
    } catch (err) {
      if (!this.gate.isCurrent(seq)) return;
      this.fail(err);
    }
  }

  async acceptSlot(slot: number): Promise<void> {
    const pending = this.view.pending;
    if (!pending.title.trim()) {
      this.commit(st.withError(this.view, "enter a title first"));
      return;
    }
    try {
      const week = await this.api.register({
        user: this.view.user,
        title: pending.title,
        duration_min: pending.durationMin,
        slot,
        iso_year: this.view.isoYear,
        iso_week: this.view.isoWeek,
      });
      this.commit(st.withError(st.withEvents(this.view, week.events), null));
      await this.requestSuggestion(); // the loop: new context, new heatmap
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        await this.loadCalendar(); // stale occupancy; rebuild, then explain
        this.commit(st.withError(this.view, err.message));
        return;
      }
      this.fail(err);
    }
  }

  addAttendee(name: string): void {
    const pending = this.view.pending;
    if (pending.attendees.includes(name)) return;
    this.setPending({ attendees: [...pending.attendees, name] });
  }

  removeAttendee(name: string): void {
    this.setPending({
      attendees: this.view.pending.attendees.filter((a) => a !== name),
    });
  }

  private setPending(patch: Partial<st.Pending>): void {
    this.commit({ ...this.view, pending: { ...this.view.pending, ...patch } });
  }
}

export function mount(root: HTMLElement, base: string, user: string, opts?: AppOptions): App {
  const app = new App(root, new Api(base), user, opts);
  void app.start();
  return app;
}
