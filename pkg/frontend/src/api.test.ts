import { afterEach, describe, expect, it, vi } from "vitest";

import { Api, ApiError } from "./api.js";

type Call = { url: string; init?: RequestInit };

function stubFetch(status: number, body: string): Call[] {
  const calls: Call[] = [];
  vi.stubGlobal("fetch", async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    return new Response(body, {
      status,
      statusText: status === 200 ? "OK" : "Error",
      headers: { "Content-Type": "application/json" },
    });
  });
  return calls;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("request routing", () => {
  it("reads health from GET /api/health", async () => {
    const calls = stubFetch(200, JSON.stringify({ status: "ok", version: "1", checkpoint: null }));
    const out = await new Api("http://h").health();
    expect(calls[0]?.url).toBe("http://h/api/health");
    expect(calls[0]?.init).toBeUndefined();
    expect(out.status).toBe("ok");
  });

  it("reads a week from GET /api/calendar/{user}/{year}/{week}", async () => {
    const calls = stubFetch(
      200,
      JSON.stringify({ user: "a b", iso_year: 2024, iso_week: 9, events: [] }),
    );
    await new Api("http://h").calendar("a b", 2024, 9);
    expect(calls[0]?.url).toBe("http://h/api/calendar/a%20b/2024/9");
  });

  it("posts suggestion requests as JSON", async () => {
    const calls = stubFetch(
      200,
      JSON.stringify({ slots: [], heatmap: [], iso_year: 2024, iso_week: 9 }),
    );
    await new Api("http://h").suggest({ user: "dana", title: "sync", duration_min: 30, k: 5 });
    expect(calls[0]?.url).toBe("http://h/api/suggest");
    expect(calls[0]?.init?.method).toBe("POST");
    expect(JSON.parse(String(calls[0]?.init?.body))).toEqual({
      user: "dana",
      title: "sync",
      duration_min: 30,
      k: 5,
    });
  });

  it("posts registrations to /api/events", async () => {
    const calls = stubFetch(
      200,
      JSON.stringify({ user: "dana", iso_year: 2024, iso_week: 9, events: [] }),
    );
    await new Api("http://h").register({ user: "dana", title: "sync", duration_min: 30, slot: 40 });
    expect(calls[0]?.url).toBe("http://h/api/events");
    expect(calls[0]?.init?.method).toBe("POST");
  });

  it("deletes by uid with URL escaping", async () => {
    const calls = stubFetch(
      200,
      JSON.stringify({ user: "dana", iso_year: 2024, iso_week: 9, events: [], deleted: "e/1" }),
    );
    await new Api("http://h").remove("e/1");
    expect(calls[0]?.url).toBe("http://h/api/events/e%2F1");
    expect(calls[0]?.init?.method).toBe("DELETE");
  });
});

describe("error surfacing", () => {
  it("lifts the service's error field into the exception", async () => {
    stubFetch(409, JSON.stringify({ error: "slot already taken" }));
    const err = await new Api().health().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(409);
    expect((err as ApiError).message).toBe("slot already taken");
  });

  it("falls back to the status line for non-JSON bodies", async () => {
    stubFetch(502, "<html>bad gateway</html>");
    const err = await new Api().health().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(502);
    expect((err as ApiError).message).toBe("502 Error");
  });
});
