import { SeedTurn, ServiceSpeaker } from "./api.js";

export interface SeedParse {
  turns?: SeedTurn[];
  error?: string;
}

const SPEAKERS: ServiceSpeaker[] = ["client", "therapist"];

/**
 * Parse the seed textarea: one turn per line, "speaker: text". Blank
 * lines are skipped; acts are left for the service to predict.
 */
export function parseSeedLines(raw: string): SeedParse {
  const turns: SeedTurn[] = [];
  const lines = raw.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "") continue;
    const colon = line.indexOf(":");
    if (colon < 0) {
      return { error: `line ${i + 1}: expected "speaker: text"` };
    }
    const speaker = line.slice(0, colon).trim().toLowerCase();
    const text = line.slice(colon + 1).trim();
    if (!SPEAKERS.includes(speaker as ServiceSpeaker)) {
      return {
        error: `line ${i + 1}: speaker must be "client" or "therapist"`,
      };
    }
    if (text === "") {
      return { error: `line ${i + 1}: turn text is empty` };
    }
    turns.push({ speaker: speaker as ServiceSpeaker, text });
  }
  if (turns.length === 0) {
    return { error: "seed context must contain at least one turn" };
  }
  return { turns };
}
