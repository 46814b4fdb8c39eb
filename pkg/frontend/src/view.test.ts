import { beforeEach, describe, expect, it, vi } from "vitest";

import type { EventRecord, SuggestResponse } from "./api.js";
import { initialView, withEvents, withHeatmap } from "./state.js";
import type { Handlers } from "./view.js";
import { render } from "./view.js";

function handlerStub(): Handlers {
  return {
    onSuggest: vi.fn(),
    onAccept: vi.fn(),
    onSwitchUser: vi.fn(),
    onAddAttendee: vi.fn(),
    onRemoveAttendee: vi.fn(),
    onTitleChange: vi.fn(),
    onDurationChange: vi.fn(),
  };
}

function flatHeatmap(fill: number, peaks: Record<number, number> = {}): number[][] {
  return Array.from({ length: 7 }, (_, day) =>
    Array.from({ length: 24 }, (_, hour) => peaks[day * 24 + hour] ?? fill),
  );
}

const SUGGESTION: SuggestResponse = {
  slots: [{ slot: 33, day: 1, hour: 9, score: 0.8 }],
  heatmap: flatHeatmap(0.1, { 33: 0.8 }),
  iso_year: 2024,
  iso_week: 10,
};

const MEETING: EventRecord = {
  uid: "e-1",
  title: "retro",
  slot: 50,
  day: 2,
  hour: 2,
  duration_min: 60,
  user: "dana",
};

let root: HTMLElement;

beforeEach(() => {
  root = document.createElement("div");
  document.body.replaceChildren(root);
});

describe("grid rendering", () => {
  it("lays out 168 cells under Monday-first day headers", () => {
    render(root, initialView("dana", 2024, 10), handlerStub());
    expect(root.querySelectorAll(".cell")).toHaveLength(168);
    const heads = [...root.querySelectorAll(".day-head")].map((n) => n.textContent);
    expect(heads).toEqual(["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]);
    expect(root.querySelectorAll(".hour-label")).toHaveLength(24);
  });

  it("writes each cell's normalized score into its heat variable", () => {
    const view = withHeatmap(initialView("dana", 2024, 10), SUGGESTION);
    render(root, view, handlerStub());
    const hot = root.querySelector<HTMLElement>('[data-slot="33"]');
    expect(hot?.style.getPropertyValue("--heat")).toBe("1");
    const cold = root.querySelector<HTMLElement>('[data-slot="0"]');
    expect(Number(cold?.style.getPropertyValue("--heat"))).toBeCloseTo(0.125, 10);
  });

  it("stars the service's top slots", () => {
    const view = withHeatmap(initialView("dana", 2024, 10), SUGGESTION);
    render(root, view, handlerStub());
    const starred = root.querySelectorAll(".cell.starred");
    expect(starred).toHaveLength(1);
    expect((starred[0] as HTMLElement).dataset["slot"]).toBe("33");
    expect(starred[0]?.querySelector(".star")?.textContent).toBe("★");
  });

  it("hatches occupied cells and shows the title", () => {
    const view = withEvents(initialView("dana", 2024, 10), [MEETING]);
    render(root, view, handlerStub());
    const cell = root.querySelector<HTMLElement>('[data-slot="50"]');
    expect(cell?.classList.contains("occupied")).toBe(true);
    expect(cell?.querySelector(".event-title")?.textContent).toBe("retro");
  });

  it("accepts clicks on free cells only", () => {
    const handlers = handlerStub();
    const view = withEvents(initialView("dana", 2024, 10), [MEETING]);
    render(root, view, handlers);
    root.querySelector<HTMLElement>('[data-slot="7"]')?.click();
    expect(handlers.onAccept).toHaveBeenCalledWith(7);
    root.querySelector<HTMLElement>('[data-slot="50"]')?.click();
    expect(handlers.onAccept).toHaveBeenCalledTimes(1);
  });
});

describe("side panel", () => {
  it("routes form interactions to the handlers", () => {
    const handlers = handlerStub();
    render(root, initialView("dana", 2024, 10), handlers);

    const title = root.querySelector<HTMLInputElement>("#title");
    title!.value = "quarterly budget";
    title!.dispatchEvent(new Event("change"));
    expect(handlers.onTitleChange).toHaveBeenCalledWith("quarterly budget");

    const duration = root.querySelector<HTMLInputElement>("#duration");
    duration!.value = "90";
    duration!.dispatchEvent(new Event("change"));
    expect(handlers.onDurationChange).toHaveBeenCalledWith(90);

    root.querySelector<HTMLElement>("#suggest")?.click();
    expect(handlers.onSuggest).toHaveBeenCalledTimes(1);

    const user = root.querySelector<HTMLInputElement>("#user");
    user!.value = "rex";
    root.querySelector<HTMLElement>("#switch-user")?.click();
    expect(handlers.onSwitchUser).toHaveBeenCalledWith("rex");
  });

  it("renders attendee chips with working add and remove", () => {
    const handlers = handlerStub();
    const view = initialView("dana", 2024, 10);
    view.pending.attendees = ["ana", "bo"];
    render(root, view, handlers);

    const chips = [...root.querySelectorAll(".chip")].map((c) => c.firstChild?.textContent);
    expect(chips).toEqual(["ana", "bo"]);

    root.querySelector<HTMLElement>('[aria-label="remove bo"]')?.click();
    expect(handlers.onRemoveAttendee).toHaveBeenCalledWith("bo");

    const input = root.querySelector<HTMLInputElement>("#attendee");
    input!.value = "  cy  ";
    root.querySelector<HTMLElement>("#add-attendee")?.click();
    expect(handlers.onAddAttendee).toHaveBeenCalledWith("cy");
  });

  it("shows errors inline and hides the box when clear", () => {
    const view = initialView("dana", 2024, 10);
    render(root, view, handlerStub());
    expect(root.querySelector<HTMLElement>("#error")?.hidden).toBe(true);

    view.error = "slot already taken";
    render(root, view, handlerStub());
    const box = root.querySelector<HTMLElement>("#error");
    expect(box?.hidden).toBe(false);
    expect(box?.textContent).toBe("slot already taken");
    expect(box?.getAttribute("role")).toBe("alert");
  });

  it("reports the loaded model in the status line", () => {
    const view = initialView("dana", 2024, 10);
    render(root, view, handlerStub());
    expect(root.querySelector("#status")?.textContent).toBe("no model loaded");

    view.checkpoint = "abcdef0123456789";
    render(root, view, handlerStub());
    expect(root.querySelector("#status")?.textContent).toBe("model abcdef012345");
  });
});
