import { describe, expect, it } from "vitest";

import { ApiClient, ApiError, FetchLike, TranscriptTurn } from "../src/api.js";
import {
  countPending,
  SessionController,
  transcriptMessages,
  ValidationError,
} from "../src/session.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

/** Minimal in-memory stand-in for the session service. */
class FakeService {
  calls: string[] = [];
  turns: TranscriptTurn[] = [];
  sessionId = "fake-session";
  utteranceGate: Promise<void> | null = null;
  failUtterance: Error | Response | null = null;

  private pushTurn(speaker: string, text: string, act: string): TranscriptTurn {
    const turn: TranscriptTurn = {
      dialogue_id: this.sessionId,
      turn_index: this.turns.length,
      speaker,
      text,
      act,
    };
    this.turns.push(turn);
    return turn;
  }

  fetch: FetchLike = async (input, init) => {
    const url = new URL(input);
    const method = init?.method ?? "GET";
    this.calls.push(`${method} ${url.pathname}`);

    if (method === "POST" && url.pathname === "/sessions") {
      const body = JSON.parse(String(init?.body)) as {
        seed_context: { speaker: string; text: string }[];
      };
      this.turns = [];
      for (const turn of body.seed_context) {
        this.pushTurn(turn.speaker, turn.text, "ID");
      }
      return jsonResponse({ session_id: this.sessionId });
    }
    if (method === "POST" && url.pathname.endsWith("/utterance")) {
      if (this.utteranceGate) await this.utteranceGate;
      if (this.failUtterance instanceof Error) throw this.failUtterance;
      if (this.failUtterance) return this.failUtterance;
      this.pushTurn("client", JSON.parse(String(init?.body)).text, "ID");
      const reply = this.pushTurn("therapist", "mhm", "ACK");
      return jsonResponse({ ...reply, act_confidence: 0.9 });
    }
    if (method === "POST" && url.pathname.endsWith("/step")) {
      const last = this.turns[this.turns.length - 1];
      const speaker = last?.speaker === "client" ? "therapist" : "client";
      const reply = this.pushTurn(speaker, "generated", "GC");
      return jsonResponse({ ...reply, act_confidence: 0.5 });
    }
    if (method === "GET" && url.pathname.endsWith("/transcript")) {
      return jsonResponse({ dialogue_id: this.sessionId, turns: this.turns });
    }
    return jsonResponse({ error_code: "unknown_session", message: "nope" }, 404);
  };
}

function makeController(): { fake: FakeService; controller: SessionController } {
  const fake = new FakeService();
  const api = new ApiClient("http://fake", fake.fetch);
  return { fake, controller: new SessionController(api) };
}

const SEED = [
  { speaker: "client" as const, text: "hi" },
  { speaker: "therapist" as const, text: "hello" },
];

describe("seed validation", () => {
  it("rejects an empty seed without making any request", async () => {
    const { fake, controller } = makeController();
    await expect(controller.start("natural", [])).rejects.toThrow(
      ValidationError,
    );
    expect(fake.calls).toHaveLength(0);
    expect(controller.lastError).toContain("at least one turn");
    expect(controller.view).toBeNull();
  });

  it("rejects blank seed text without making any request", async () => {
    const { fake, controller } = makeController();
    const seed = [{ speaker: "client" as const, text: "   " }];
    await expect(controller.start("natural", seed)).rejects.toThrow(
      ValidationError,
    );
    expect(fake.calls).toHaveLength(0);
  });
});

describe("exchange lifecycle", () => {
  it("shows the optimistic pair, then mirrors the transcript", async () => {
    const { fake, controller } = makeController();
    await controller.start("natural", SEED, { temperature: 0.5, seed: 5 });
    expect(controller.view!.messages).toHaveLength(2);
    // the view keeps a snapshot of the options the session was created with
    expect(controller.view!.options).toEqual({ temperature: 0.5, seed: 5 });

    let release!: () => void;
    fake.utteranceGate = new Promise((r) => (release = r));
    const inFlight = controller.sendMessage("how are you");

    const mid = controller.view!.messages;
    expect(mid).toHaveLength(4);
    expect(mid[2]).toEqual({
      speaker: "client",
      text: "how are you",
      act: "",
      pending: false,
    });
    expect(mid[3]).toEqual({ speaker: "agent", text: "", act: "", pending: true });
    expect(countPending(mid)).toBe(1);
    expect(controller.canSend).toBe(false);
    expect(controller.pending).toBe(true);

    release();
    await inFlight;
    expect(countPending(controller.view!.messages)).toBe(0);
    expect(controller.canSend).toBe(true);
    expect(controller.view!.messages).toHaveLength(4);
    expect(controller.view!.messages[3]).toEqual({
      speaker: "agent",
      text: "mhm",
      act: "ACK",
      pending: false,
    });
  });

  it("refuses a second send while one is pending", async () => {
    const { fake, controller } = makeController();
    await controller.start("natural", SEED);
    let release!: () => void;
    fake.utteranceGate = new Promise((r) => (release = r));
    const inFlight = controller.sendMessage("first");
    await expect(controller.sendMessage("second")).rejects.toThrow(
      "a turn is already pending",
    );
    release();
    await inFlight;
    // only the first utterance reached the service
    const posts = fake.calls.filter((c) => c.endsWith("/utterance"));
    expect(posts).toHaveLength(1);
  });

  it("rejects empty text without contacting the service", async () => {
    const { fake, controller } = makeController();
    await controller.start("natural", SEED);
    const before = fake.calls.length;
    await expect(controller.sendMessage("   ")).rejects.toThrow(
      ValidationError,
    );
    expect(fake.calls).toHaveLength(before);
  });

  it("rolls the optimistic bubbles back when the request fails", async () => {
    const { fake, controller } = makeController();
    await controller.start("natural", SEED);
    const before = controller.view!.messages.slice();

    fake.failUtterance = new TypeError("connection refused");
    const attempt = controller.sendMessage("are you there");
    await expect(attempt).rejects.toThrow(ApiError);
    await attempt.catch((err) => {
      expect((err as ApiError).errorCode).toBe("unreachable");
    });
    expect(controller.view!.messages).toEqual(before);
    expect(controller.canSend).toBe(true);
    expect(controller.lastError).toContain("unreachable");

    // a retry from the restored state succeeds
    fake.failUtterance = null;
    await controller.sendMessage("are you there");
    expect(controller.view!.messages).toHaveLength(4);
  });

  it("rolls back on service-side errors too", async () => {
    const { fake, controller } = makeController();
    await controller.start("natural", SEED);
    const before = controller.view!.messages.slice();
    fake.failUtterance = jsonResponse(
      { error_code: "busy", message: "another request is in flight" },
      409,
    );
    const attempt = controller.sendMessage("hello?");
    await expect(attempt).rejects.toMatchObject({ errorCode: "busy", status: 409 });
    expect(controller.view!.messages).toEqual(before);
    expect(countPending(controller.view!.messages)).toBe(0);
  });
});

describe("synthetic sessions", () => {
  it("keeps input disabled and advances by step", async () => {
    const { fake, controller } = makeController();
    await controller.start("synthetic", SEED);
    expect(controller.canSend).toBe(false);
    await expect(controller.sendMessage("hi")).rejects.toThrow(
      "input is disabled",
    );
    await controller.step();
    expect(controller.view!.messages).toHaveLength(3);
    expect(controller.view!.messages).toEqual(
      transcriptMessages({ dialogue_id: fake.sessionId, turns: fake.turns }),
    );
  });
});

describe("start failures", () => {
  it("keeps a retryable error state when the service is down", async () => {
    const failing: FetchLike = async () => {
      throw new TypeError("fetch failed");
    };
    const controller = new SessionController(new ApiClient("http://x", failing));
    const attempt = controller.start("natural", SEED);
    await expect(attempt).rejects.toMatchObject({ errorCode: "unreachable" });
    expect(controller.view).toBeNull();
    expect(controller.lastError).toContain("unreachable");
  });
});
