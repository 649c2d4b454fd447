import { actFullName } from "./acts.js";
import { ChatMessage } from "./session.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

/** Act code badge; the full name appears on hover via the title attribute. */
export function renderActBadge(act: string): string {
  const title = escapeHtml(actFullName(act));
  return `<span class="act-badge" title="${title}">${escapeHtml(act)}</span>`;
}

export function renderMessage(message: ChatMessage): string {
  const classes = ["bubble", message.speaker];
  if (message.pending) classes.push("pending");
  const badge =
    !message.pending && message.act !== "" ? renderActBadge(message.act) : "";
  const text = message.pending
    ? `<span class="dots">&hellip;</span>`
    : `<span class="text">${escapeHtml(message.text)}</span>`;
  return `<div class="${classes.join(" ")}">${badge}${text}</div>`;
}

export function renderMessages(messages: ChatMessage[]): string {
  return messages.map(renderMessage).join("\n");
}
