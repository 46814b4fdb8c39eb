/** DOM rendering. Pure view: every number shown comes from the last
 * service response, occupied cells are hatched, suggested cells glow
 * with intensity = normalized score, the service's top slots carry a
 * star. */

import type { WeekView } from "./state.js";
import { DAY_NAMES, HOURS, DAYS } from "./state.js";

export interface Handlers {
  onSuggest(): void;
  onAccept(slot: number): void;
  onSwitchUser(user: string): void;
  onAddAttendee(name: string): void;
  onRemoveAttendee(name: string): void;
  onTitleChange(value: string): void;
  onDurationChange(value: number): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderGrid(view: WeekView, handlers: Handlers): HTMLElement {
  const grid = el("div", "grid");
  grid.style.setProperty("--days", String(DAYS));

  grid.appendChild(el("div", "corner"));
  for (const name of DAY_NAMES) grid.appendChild(el("div", "day-head", name));

  for (let hour = 0; hour < HOURS; hour++) {
    grid.appendChild(el("div", "hour-label", `${String(hour).padStart(2, "0")}:00`));
    for (let day = 0; day < DAYS; day++) {
      const slot = day * HOURS + hour;
      const cell = view.cells[slot];
      if (cell === undefined) continue;
      const node = el("div", "cell");
      node.dataset["slot"] = String(slot);
      node.style.setProperty("--heat", String(cell.score));
      if (cell.occupied) {
        node.classList.add("occupied");
        if (cell.title !== null) {
          node.title = cell.title;
          node.appendChild(el("span", "event-title", cell.title));
        }
      } else {
        if (cell.starred) {
          node.classList.add("starred");
          node.appendChild(el("span", "star", "★"));
        }
        node.addEventListener("click", () => handlers.onAccept(slot));
      }
      grid.appendChild(node);
    }
  }
  return grid;
}

function renderChips(view: WeekView, handlers: Handlers): HTMLElement {
  const wrap = el("div", "attendees");
  wrap.appendChild(el("label", undefined, "Attendees"));
  const list = el("ul", "chips");
  list.id = "chips";
  for (const name of view.pending.attendees) {
    const chip = el("li", "chip", name);
    const remove = el("button", "chip-remove", "×");
    remove.type = "button";
    remove.setAttribute("aria-label", `remove ${name}`);
    remove.addEventListener("click", () => handlers.onRemoveAttendee(name));
    chip.appendChild(remove);
    list.appendChild(chip);
  }
  wrap.appendChild(list);

  const row = el("div", "row");
  const input = el("input");
  input.id = "attendee";
  input.placeholder = "user id";
  const add = el("button", undefined, "Add");
  add.id = "add-attendee";
  add.type = "button";
  add.addEventListener("click", () => {
    if (input.value.trim()) handlers.onAddAttendee(input.value.trim());
  });
  row.append(input, add);
  wrap.appendChild(row);
  return wrap;
}

function renderPanel(view: WeekView, handlers: Handlers): HTMLElement {
  const panel = el("aside", "panel");

  const who = el("div", "row");
  const user = el("input");
  user.id = "user";
  user.value = view.user;
  const switchBtn = el("button", undefined, "Load");
  switchBtn.id = "switch-user";
  switchBtn.type = "button";
  switchBtn.addEventListener("click", () => {
    if (user.value.trim()) handlers.onSwitchUser(user.value.trim());
  });
  who.append(user, switchBtn);
  panel.appendChild(who);

  const title = el("input");
  title.id = "title";
  title.placeholder = "event title";
  title.value = view.pending.title;
  title.addEventListener("change", () => handlers.onTitleChange(title.value));
  panel.appendChild(title);

  const duration = el("input");
  duration.id = "duration";
  duration.type = "number";
  duration.min = "15";
  duration.step = "15";
  duration.value = String(view.pending.durationMin);
  duration.addEventListener("change", () => {
    const v = Number(duration.value);
    if (Number.isFinite(v) && v > 0) handlers.onDurationChange(v);
  });
  panel.appendChild(duration);

  panel.appendChild(renderChips(view, handlers));

  const suggest = el("button", "primary", "Suggest slots");
  suggest.id = "suggest";
  suggest.type = "button";
  suggest.addEventListener("click", () => handlers.onSuggest());
  panel.appendChild(suggest);

  const error = el("div", "error");
  error.id = "error";
  error.setAttribute("role", "alert");
  if (view.error !== null) {
    error.textContent = view.error;
  } else {
    error.hidden = true;
  }
  panel.appendChild(error);

  const status = el("div", "status");
  status.id = "status";
  status.textContent =
    view.checkpoint === null
      ? "no model loaded"
      : `model ${view.checkpoint.slice(0, 12)}`;
  panel.appendChild(status);

  return panel;
}

export function render(root: HTMLElement, view: WeekView, handlers: Handlers): void {
  const app = el("div", "app");
  const main = el("main", "week");
  main.appendChild(
    el("h1", "week-title", `${view.user} · ${view.isoYear}-W${String(view.isoWeek).padStart(2, "0")}`),
  );
  main.appendChild(renderGrid(view, handlers));
  app.append(main, renderPanel(view, handlers));
  root.replaceChildren(app);
}
