/** Typed client for the scheduling service. Every mutation and every
 * piece of rendered state goes through these five endpoints. */

export interface HealthResponse {
  status: string;
  version: string;
  checkpoint: string | null;
}

export interface SlotSuggestion {
  slot: number;
  day: number;
  hour: number;
  score: number;
}

export interface SuggestResponse {
  slots: SlotSuggestion[];
  heatmap: number[][];
  iso_year: number;
  iso_week: number;
}

export interface EventRecord {
  uid: string;
  title: string;
  slot: number;
  day: number;
  hour: number;
  duration_min: number;
  user: string;
}

export interface WeekResponse {
  user: string;
  iso_year: number;
  iso_week: number;
  events: EventRecord[];
  registered?: EventRecord;
  deleted?: string;
}

export interface SuggestRequest {
  user: string;
  title: string;
  duration_min: number;
  attendees?: string[];
  k?: number;
  iso_year?: number;
  iso_week?: number;
}

export interface RegisterRequest {
  user: string;
  title: string;
  duration_min: number;
  slot: number;
  iso_year?: number;
  iso_week?: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, init);
  const text = await resp.text();
  let parsed: unknown = null;
  try {
    parsed = text ? JSON.parse(text) : null;
  } catch {
    // non-JSON body; fall through to the status line
  }
  if (!resp.ok) {
    const detail =
      parsed !== null &&
      typeof parsed === "object" &&
      typeof (parsed as { error?: unknown }).error === "string"
        ? (parsed as { error: string }).error
        : `${resp.status} ${resp.statusText}`;
    throw new ApiError(resp.status, detail);
  }
  return parsed as T;
}

function post(body: unknown): RequestInit {
  return {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  };
}

export class Api {
  constructor(readonly base: string = "") {}

  health(): Promise<HealthResponse> {
    return request(`${this.base}/api/health`);
  }

  calendar(user: string, isoYear: number, isoWeek: number): Promise<WeekResponse> {
    const u = encodeURIComponent(user);
    return request(`${this.base}/api/calendar/${u}/${isoYear}/${isoWeek}`);
  }

  suggest(body: SuggestRequest): Promise<SuggestResponse> {
    return request(`${this.base}/api/suggest`, post(body));
  }

  register(body: RegisterRequest): Promise<WeekResponse> {
    return request(`${this.base}/api/events`, post(body));
  }

  remove(uid: string): Promise<WeekResponse> {
    return request(`${this.base}/api/events/${encodeURIComponent(uid)}`, {
      method: "DELETE",
    });
  }
}
