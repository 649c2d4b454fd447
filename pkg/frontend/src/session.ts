import {
  ApiClient,
  ApiError,
  SeedTurn,
  SessionOptions,
  SessionSetup,
  Transcript,
} from "./api.js";

export type UiSpeaker = "client" | "agent";

export interface ChatMessage {
  speaker: UiSpeaker;
  text: string;
  act: string;
  pending: boolean;
}

export interface SessionView {
  sessionId: string;
  setup: SessionSetup;
  messages: ChatMessage[];
  options: SessionOptions;
}

/** Raised for client-side input problems; no request was made. */
export class ValidationError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ValidationError";
  }
}

function toUiSpeaker(speaker: string): UiSpeaker {
  return speaker === "client" ? "client" : "agent";
}

export function transcriptMessages(transcript: Transcript): ChatMessage[] {
  return transcript.turns.map((t) => ({
    speaker: toUiSpeaker(t.speaker),
    text: t.text,
    act: t.act,
    pending: false,
  }));
}

export function countPending(messages: ChatMessage[]): number {
  return messages.reduce((n, m) => n + (m.pending ? 1 : 0), 0);
}

export function validateSeed(seed: SeedTurn[]): string | null {
  if (seed.length === 0) {
    return "seed context must contain at least one turn";
  }
  for (const turn of seed) {
    if (turn.text.trim() === "") {
      return "seed turns must have non-empty text";
    }
  }
  return null;
}

type Listener = () => void;

/**
 * Holds one chat session's UI state and keeps it in lockstep with the
 * service transcript. While an exchange is in flight the view shows the
 * optimistic client bubble plus a single pending agent bubble; once the
 * reply lands the state is reloaded from GET /transcript so the two can
 * never drift apart.
 */
export class SessionController {
  view: SessionView | null = null;
  lastError: string | null = null;

  private busy = false;
  private listeners: Listener[] = [];

  constructor(private readonly api: ApiClient) {}

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  /** True while a turn is pending (request in flight). */
  get pending(): boolean {
    return this.busy;
  }

  /** Input is enabled only in a natural session with no pending turn. */
  get canSend(): boolean {
    return (
      this.view !== null && !this.busy && this.view.setup === "natural"
    );
  }

  async start(
    setup: SessionSetup,
    seed: SeedTurn[],
    options?: SessionOptions,
  ): Promise<SessionView> {
    const problem = validateSeed(seed);
    if (problem !== null) {
      this.lastError = problem;
      this.notify();
      throw new ValidationError(problem);
    }
    this.lastError = null;
    try {
      const sessionId = await this.api.createSession(setup, seed, options);
      const transcript = await this.api.transcript(sessionId);
      this.view = {
        sessionId,
        setup,
        messages: transcriptMessages(transcript),
        options: { ...options },
      };
      this.notify();
      return this.view;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      this.notify();
      throw err;
    }
  }

  /**
   * Post one client utterance. The client bubble and a pending agent
   * bubble appear immediately; both are replaced by the authoritative
   * transcript when the service answers. On failure the optimistic
   * bubbles are rolled back so a retry starts from the previous state.
   */
  async sendMessage(text: string): Promise<SessionView> {
    if (this.view === null) {
      throw new ValidationError("no active session");
    }
    if (!this.canSend) {
      throw new ValidationError(
        this.busy ? "a turn is already pending" : "input is disabled",
      );
    }
    const trimmed = text.trim();
    if (trimmed === "") {
      throw new ValidationError("utterance text must be non-empty");
    }
    const before = this.view.messages.slice();
    this.view.messages.push(
      { speaker: "client", text: trimmed, act: "", pending: false },
      { speaker: "agent", text: "", act: "", pending: true },
    );
    this.busy = true;
    this.lastError = null;
    this.notify();
    try {
      await this.api.postUtterance(this.view.sessionId, trimmed);
      await this.reloadTranscript();
      return this.view;
    } catch (err) {
      this.view.messages = before;
      this.lastError = err instanceof Error ? err.message : String(err);
      throw err;
    } finally {
      this.busy = false;
      this.notify();
    }
  }

  /** Advance a synthetic session by one agent-generated turn. */
  async step(): Promise<SessionView> {
    if (this.view === null) {
      throw new ValidationError("no active session");
    }
    if (this.busy) {
      throw new ValidationError("a turn is already pending");
    }
    this.busy = true;
    this.lastError = null;
    this.notify();
    try {
      await this.api.step(this.view.sessionId);
      await this.reloadTranscript();
      return this.view;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      throw err;
    } finally {
      this.busy = false;
      this.notify();
    }
  }

  /** Replace local messages with the service transcript. */
  async reloadTranscript(): Promise<void> {
    if (this.view === null) {
      throw new ValidationError("no active session");
    }
    const transcript = await this.api.transcript(this.view.sessionId);
    this.view.messages = transcriptMessages(transcript);
  }

  /**
   * The transcript exactly as the service serialized it. "json" is the
   * structured view; "jsonl" is the corpus line format, suitable for
   * feeding straight back into the corpus tooling.
   */
  async exportTranscript(format: "json" | "jsonl" = "json"): Promise<string> {
    if (this.view === null) {
      throw new ValidationError("no active session");
    }
    return await this.api.transcriptRaw(this.view.sessionId, format);
  }

  /** True when the last error came from a failed connection. */
  isUnreachable(err: unknown): boolean {
    return err instanceof ApiError && err.errorCode === "unreachable";
  }
}
