/** Thin typed wrapper over the session endpoints and event stream.
 *
 * All game state lives on the server; this class only moves payloads.
 * The one piece of client-side state worth keeping is the seat token.
 */
import type {
  ApiError,
  CreateSessionResponse,
  JoinResponse,
  OkAck,
  SubmitAck,
  View,
} from "./schema.js";
import { SSEParser } from "./sse.js";

export class ApiRequestError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    public readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

async function expectJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let code = `http_${resp.status}`;
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as ApiError;
      if (body.error) {
        code = body.error;
        detail = body.detail ?? "";
      }
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiRequestError(resp.status, code, detail);
  }
  return (await resp.json()) as T;
}

export interface CreateSessionRequest {
  mechanism?: Record<string, unknown>;
  game?: Record<string, unknown>;
  human_seats?: number;
  games_in_series?: number;
  questionnaire?: boolean;
  bonus_rate?: number;
  response_seconds?: number;
  overview_seconds?: number;
  instruction_key?: string | null;
}

export interface StreamOptions {
  /** ask the server to close after this many events (stream is reopened) */
  maxEvents?: number;
  signal?: AbortSignal;
  /** stop reopening once a view with this predicate arrived */
  until?: (view: View) => boolean;
}

export class SessionClient {
  token: string | null = null;
  seat: number | null = null;

  constructor(
    public readonly base: string,
    public readonly sessionId: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  static async create(
    base: string,
    body: CreateSessionRequest,
    fetchImpl: typeof fetch = fetch,
  ): Promise<{ client: SessionClient; created: CreateSessionResponse }> {
    const resp = await fetchImpl(`${base}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    const created = await expectJson<CreateSessionResponse>(resp);
    return {
      client: new SessionClient(base, created.session_id, fetchImpl),
      created,
    };
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.fetchImpl(`${this.base}/sessions/${this.sessionId}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((resp) => expectJson<T>(resp));
  }

  async join(clientName?: string): Promise<JoinResponse> {
    const out = await this.post<JoinResponse>("/join", { client: clientName });
    this.token = out.token;
    this.seat = out.seat;
    return out;
  }

  private get tokenOrThrow(): string {
    if (this.token === null) throw new Error("join the session first");
    return this.token;
  }

  /** record the current slider position server-side (timeout fallback) */
  stage(amount: number): Promise<OkAck> {
    return this.post("/stage", { token: this.tokenOrThrow, amount });
  }

  /** the updated view arrives over the stream; this returns the server ack */
  submitContribution(amount: number): Promise<SubmitAck> {
    return this.post("/submit-contribution", {
      token: this.tokenOrThrow,
      amount,
    });
  }

  submitQuestionnaire(ratings: number[]): Promise<OkAck> {
    return this.post("/submit-questionnaire", {
      token: this.tokenOrThrow,
      ratings,
    });
  }

  async view(): Promise<View> {
    const token = encodeURIComponent(this.tokenOrThrow);
    const resp = await this.fetchImpl(
      `${this.base}/sessions/${this.sessionId}/view?token=${token}`,
    );
    return expectJson<View>(resp);
  }

  /**
   * Follow the server-push stream, invoking onView for every event in
   * arrival order. The server closes bounded streams; this keeps
   * reopening them until the session ends, `until` matches, or the
   * signal aborts. Resolves with the last view seen.
   */
  async stream(
    onView: (view: View) => void,
    options: StreamOptions = {},
  ): Promise<View | null> {
    const token = encodeURIComponent(this.tokenOrThrow);
    let last: View | null = null;
    const done = (v: View) =>
      v.phase === "ended" || (options.until !== undefined && options.until(v));
    for (;;) {
      let url = `${this.base}/sessions/${this.sessionId}/stream?token=${token}`;
      if (options.maxEvents !== undefined) url += `&max_events=${options.maxEvents}`;
      const resp = await this.fetchImpl(url, { signal: options.signal });
      if (!resp.ok || resp.body === null) {
        throw new ApiRequestError(resp.status, `http_${resp.status}`, "no stream");
      }
      const reader = resp.body.getReader();
      const decoder = new TextDecoder();
      const parser = new SSEParser();
      for (;;) {
        const { value, done: eof } = await reader.read();
        if (eof) break;
        for (const payload of parser.push(decoder.decode(value, { stream: true }))) {
          const view = JSON.parse(payload) as View;
          last = view;
          onView(view);
          if (done(view)) {
            await reader.cancel().catch(() => undefined);
            return view;
          }
        }
      }
      if (last !== null && done(last)) return last;
      if (options.signal?.aborted) return last;
    }
  }
}
