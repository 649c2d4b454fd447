/** The twelve response-act codes the service tags every turn with. */
export const ACT_CODES = [
  "ID",
  "IRQ",
  "YNQ",
  "CRQ",
  "ORQ",
  "CD",
  "PA",
  "NA",
  "OD",
  "GT",
  "ACK",
  "GC",
] as const;

export type ActCode = (typeof ACT_CODES)[number];

export const ACT_FULL_NAMES: Record<ActCode, string> = {
  ID: "information delivery",
  IRQ: "information request",
  YNQ: "yes/no question",
  CRQ: "clarification request",
  ORQ: "opinion request",
  CD: "clarification delivery",
  PA: "positive answer",
  NA: "negative answer",
  OD: "opinion delivery",
  GT: "greeting",
  ACK: "acknowledgment",
  GC: "general chit-chat",
};

export function isActCode(value: string): value is ActCode {
  return (ACT_CODES as readonly string[]).includes(value);
}

/** Human-readable name for a code; unknown codes fall back to themselves. */
export function actFullName(code: string): string {
  return isActCode(code) ? ACT_FULL_NAMES[code] : code;
}
