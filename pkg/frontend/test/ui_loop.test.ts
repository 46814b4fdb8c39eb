/** End-to-end loop against a live service process: generate a small
 * synthetic dataset, train a checkpoint, start the HTTP server, then
 * drive the real controller through request -> heatmap -> accept ->
 * re-request and check the rendered grid against the raw responses. */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { Api } from "../src/api.js";
import { App } from "../src/main.js";

const PORT = 18653;
const BASE = `http://127.0.0.1:${PORT}`;
const ENTRY = "import sys; from nesa.cli import main; sys.exit(main(sys.argv[1:]))";

function cli(args: string[]): void {
  const out = spawnSync("python3", ["-c", ENTRY, ...args], { encoding: "utf8" });
  if (out.status !== 0) {
    throw new Error(`cli ${args.join(" ")} failed:\n${out.stdout}\n${out.stderr}`);
  }
}

async function waitHealthy(timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const resp = await fetch(`${BASE}/api/health`);
      if (resp.ok) {
        const body = (await resp.json()) as { checkpoint: string | null };
        if (body.checkpoint !== null) return;
      }
    } catch {
      // server not accepting connections yet
    }
    if (Date.now() > deadline) throw new Error("service did not become healthy");
    await new Promise((r) => setTimeout(r, 250));
  }
}

let server: ChildProcess | null = null;

beforeAll(async () => {
  const work = mkdtempSync(join(tmpdir(), "webui-loop-"));
  const data = join(work, "data");
  const ckpt = join(work, "model.npz");
  cli(["gen", "--data", data, "--users", "3", "--weeks", "6", "--seed", "11"]);
  cli([
    "train",
    "--data", data,
    "--checkpoint", ckpt,
    "--epochs", "2",
    "--seed", "3",
  ]);
  server = spawn(
    "python3",
    ["-c", ENTRY, "serve", "--checkpoint", ckpt, "--data", data, "--port", String(PORT)],
    { stdio: "ignore" },
  );
  await waitHealthy(30_000);
}, 240_000);

afterAll(() => {
  server?.kill();
});

function freshApp(user: string): App {
  const root = document.createElement("div");
  document.body.replaceChildren(root);
  return new App(root, new Api(BASE), user, { isoYear: 2024, isoWeek: 5, k: 24 });
}

describe("live scheduling loop", () => {
  it("completes request -> heatmap -> accept -> re-request", async () => {
    const app = freshApp("user000");
    const root = app.root;
    await app.start();
    expect(app.view.checkpoint).not.toBeNull();
    expect(app.view.error).toBeNull();

    const title = root.querySelector<HTMLInputElement>("#title");
    title!.value = "project sync";
    title!.dispatchEvent(new Event("change"));
    expect(app.view.pending.title).toBe("project sync");

    await app.requestSuggestion();
    const first = app.lastSuggest;
    expect(first).not.toBeNull();
    expect(first!.heatmap).toHaveLength(7);
    expect([first!.iso_year, first!.iso_week]).toEqual([2024, 5]);

    // the rendered overlay is the raw response divided by one constant
    const norm = app.view.normConstant;
    expect(norm).toBeGreaterThan(0);
    app.view.cells.forEach((cell, s) => {
      const raw = first!.heatmap[Math.floor(s / 24)]![s % 24]!;
      expect(Math.abs(cell.score * norm - raw)).toBeLessThan(1e-9);
      const node = root.querySelector<HTMLElement>(`[data-slot="${s}"]`);
      expect(Number(node?.style.getPropertyValue("--heat"))).toBeCloseTo(cell.score, 12);
    });

    // accept the best suggested slot that is still free
    const free = first!.slots.find((s) => app.view.cells[s.slot]?.occupied === false);
    expect(free).toBeDefined();
    const target = free!.slot;
    expect(
      root.querySelector(`[data-slot="${target}"]`)?.classList.contains("occupied"),
    ).toBe(false);

    await app.acceptSlot(target);

    // the registered event visibly occupies its cell
    const cell = root.querySelector<HTMLElement>(`[data-slot="${target}"]`);
    expect(cell?.classList.contains("occupied")).toBe(true);
    expect(cell?.querySelector(".event-title")?.textContent).toBe("project sync");

    // and accepting closed the loop with a fresh suggestion
    expect(app.lastSuggest).not.toBe(first);
    expect(app.lastSuggest!.heatmap).toHaveLength(7);
    expect(app.view.error).toBeNull();
  }, 60_000);

  it("rebuilds the week from GET alone after a mutation", async () => {
    const writer = freshApp("user001");
    await writer.start();
    const occupiedBefore = writer.view.cells.filter((c) => c.occupied).length;
    writer.view = {
      ...writer.view,
      pending: { title: "handoff review", durationMin: 60, attendees: [] },
    };
    const slot = writer.view.cells.findIndex((c) => !c.occupied);
    await writer.acceptSlot(slot);
    expect(writer.view.cells[slot]?.occupied).toBe(true);

    // a second client sees the same occupancy purely from its GETs
    const reader = freshApp("user001");
    await reader.start();
    expect(reader.view.cells[slot]?.occupied).toBe(true);
    expect(reader.view.cells.filter((c) => c.occupied).length).toBeGreaterThan(occupiedBefore);
  }, 60_000);
});
