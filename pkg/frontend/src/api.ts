/** Typed client for the dialogue session service HTTP interface. */

export type SessionSetup = "natural" | "synthetic";
export type ServiceSpeaker = "client" | "therapist";

export interface SeedTurn {
  speaker: ServiceSpeaker;
  text: string;
  act?: string;
}

export interface SessionOptions {
  temperature?: number;
  top_k?: number;
  top_p?: number;
  max_new_tokens?: number;
  context_k?: number;
  seed?: number;
}

export interface AgentTurn {
  speaker: string;
  text: string;
  act: string;
  act_confidence: number;
  turn_index: number;
}

export interface TranscriptTurn {
  dialogue_id: string;
  turn_index: number;
  speaker: string;
  text: string;
  act: string;
}

export interface Transcript {
  dialogue_id: string;
  turns: TranscriptTurn[];
}

export interface Health {
  status: string;
  model_checkpoint: string;
}

/** Error body shape the service promises: {error_code, message}. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly errorCode: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let res: Response;
    try {
      res = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      const detail = err instanceof Error ? err.message : String(err);
      throw new ApiError(0, "unreachable", `service unreachable: ${detail}`);
    }
    if (!res.ok) {
      let code = "http_error";
      let message = `${res.status} ${res.statusText}`;
      try {
        const body = (await res.json()) as {
          error_code?: string;
          message?: string;
        };
        if (body.error_code) code = body.error_code;
        if (body.message) message = body.message;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(res.status, code, message);
    }
    return res;
  }

  private async requestJson<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.request(path, init);
    return (await res.json()) as T;
  }

  private post(path: string, body: unknown): Promise<Response> {
    return this.request(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  health(): Promise<Health> {
    return this.requestJson<Health>("/health");
  }

  async createSession(
    setup: SessionSetup,
    seedContext: SeedTurn[],
    options?: SessionOptions,
  ): Promise<string> {
    const body: Record<string, unknown> = { setup, seed_context: seedContext };
    if (options) body.options = options;
    const res = await this.post("/sessions", body);
    const out = (await res.json()) as { session_id: string };
    return out.session_id;
  }

  async postUtterance(sessionId: string, text: string): Promise<AgentTurn> {
    const res = await this.post(`/sessions/${sessionId}/utterance`, { text });
    return (await res.json()) as AgentTurn;
  }

  async step(sessionId: string): Promise<AgentTurn> {
    const res = await this.post(`/sessions/${sessionId}/step`, {});
    return (await res.json()) as AgentTurn;
  }

  transcript(sessionId: string): Promise<Transcript> {
    return this.requestJson<Transcript>(`/sessions/${sessionId}/transcript`);
  }

  /** Raw transcript body, byte-for-byte as the service sent it. */
  async transcriptRaw(
    sessionId: string,
    format: "json" | "jsonl" = "json",
  ): Promise<string> {
    const suffix = format === "jsonl" ? "?format=jsonl" : "";
    const res = await this.request(`/sessions/${sessionId}/transcript${suffix}`);
    return await res.text();
  }
}
