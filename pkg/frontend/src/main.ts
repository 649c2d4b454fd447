import { ApiClient, ApiError } from "./api.js";
import { parseSeedLines } from "./seed.js";
import { renderMessages } from "./render.js";
import { SessionController, ValidationError } from "./session.js";

const DEFAULT_SEED = [
  "client: hello i have been feeling anxious lately",
  "therapist: welcome, can you tell me more about that",
].join("\n");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function serviceBaseUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("api") ?? "http://127.0.0.1:8000";
}

function main(): void {
  const api = new ApiClient(serviceBaseUrl());
  const controller = new SessionController(api);

  const banner = el<HTMLDivElement>("banner");
  const seedBox = el<HTMLTextAreaElement>("seed");
  const seedError = el<HTMLDivElement>("seed-error");
  const startButton = el<HTMLButtonElement>("start");
  const seedForm = el<HTMLDivElement>("seed-form");
  const chat = el<HTMLDivElement>("chat");
  const messagesBox = el<HTMLDivElement>("messages");
  const input = el<HTMLInputElement>("composer");
  const sendButton = el<HTMLButtonElement>("send");
  const exportButton = el<HTMLButtonElement>("export");
  const resetButton = el<HTMLButtonElement>("reset");

  seedBox.value = DEFAULT_SEED;

  function showBanner(text: string, retry?: () => void): void {
    banner.replaceChildren();
    banner.append(text);
    if (retry) {
      const button = document.createElement("button");
      button.textContent = "retry";
      button.addEventListener("click", retry);
      banner.append(" ", button);
    }
    banner.hidden = false;
  }

  function hideBanner(): void {
    banner.hidden = true;
  }

  function render(): void {
    const view = controller.view;
    seedForm.hidden = view !== null;
    chat.hidden = view === null;
    if (view === null) return;
    messagesBox.innerHTML = renderMessages(view.messages);
    messagesBox.scrollTop = messagesBox.scrollHeight;
    input.disabled = !controller.canSend;
    sendButton.disabled = !controller.canSend;
    exportButton.disabled = controller.pending;
  }

  controller.onChange(render);

  async function checkHealth(): Promise<void> {
    try {
      const health = await api.health();
      hideBanner();
      showBanner(`connected, model: ${health.model_checkpoint}`);
      setTimeout(hideBanner, 2000);
    } catch (err) {
      const detail = err instanceof Error ? err.message : String(err);
      showBanner(`service unavailable: ${detail}`, () => void checkHealth());
    }
  }

  startButton.addEventListener("click", async () => {
    seedError.textContent = "";
    const parsed = parseSeedLines(seedBox.value);
    if (parsed.error) {
      seedError.textContent = parsed.error;
      return;
    }
    try {
      await controller.start("natural", parsed.turns ?? []);
      hideBanner();
    } catch (err) {
      if (err instanceof ValidationError) {
        seedError.textContent = err.message;
      } else if (controller.isUnreachable(err)) {
        showBanner(controller.lastError ?? "service unavailable", () => {
          startButton.click();
        });
      } else if (err instanceof ApiError) {
        seedError.textContent = `${err.errorCode}: ${err.message}`;
      } else {
        seedError.textContent = String(err);
      }
    }
  });

  async function send(): Promise<void> {
    const text = input.value;
    if (text.trim() === "") return;
    input.value = "";
    try {
      await controller.sendMessage(text);
      hideBanner();
    } catch (err) {
      input.value = text;
      if (controller.isUnreachable(err)) {
        showBanner(controller.lastError ?? "service unavailable", () => {
          void send();
        });
      } else if (err instanceof ApiError) {
        showBanner(`${err.errorCode}: ${err.message}`);
      }
    }
  }

  sendButton.addEventListener("click", () => void send());
  input.addEventListener("keydown", (event) => {
    if (event.key === "Enter" && !input.disabled) void send();
  });

  exportButton.addEventListener("click", async () => {
    try {
      const body = await controller.exportTranscript("jsonl");
      const blob = new Blob([body], { type: "application/jsonl" });
      const link = document.createElement("a");
      link.href = URL.createObjectURL(blob);
      link.download = `${controller.view?.sessionId ?? "transcript"}.jsonl`;
      link.click();
      URL.revokeObjectURL(link.href);
    } catch (err) {
      if (err instanceof ApiError) {
        showBanner(`${err.errorCode}: ${err.message}`);
      }
    }
  });

  resetButton.addEventListener("click", () => {
    controller.view = null;
    render();
  });

  render();
  void checkHealth();
}

main();
