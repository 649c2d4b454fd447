"""Loading, validation, splitting, and windowing of act-labeled dyadic dialogue corpora.

The on-disk corpus format is UTF-8 JSON-lines: one utterance per line with the
flat fields ``dialogue_id``, ``turn_index``, ``speaker``, ``text``, ``act``.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

SPEAKERS = ("therapist", "client")


class DialogueAct(Enum):
    """The 12 dialogue-act codes carried by every utterance."""

    ID = "ID"    # information delivery
    IRQ = "IRQ"  # information request
    YNQ = "YNQ"  # yes/no question
    CRQ = "CRQ"  # clarification request
    ORQ = "ORQ"  # opinion request
    CD = "CD"    # clarification delivery
    PA = "PA"    # positive answer
    NA = "NA"    # negative answer
    OD = "OD"    # opinion delivery
    GT = "GT"    # greeting
    ACK = "ACK"  # acknowledgment
    GC = "GC"    # general chit-chat

    @property
    def index(self) -> int:
        return _ACT_INDEX[self]

    @classmethod
    def from_index(cls, idx: int) -> "DialogueAct":
        return ACTS[idx]

    @classmethod
    def parse(cls, code: str) -> "DialogueAct":
        try:
            return cls[code]
        except (KeyError, TypeError):
            raise CorpusError(f"unknown act code {code!r}") from None


ACTS: tuple[DialogueAct, ...] = tuple(DialogueAct)
N_ACTS = len(ACTS)
_ACT_INDEX = {act: i for i, act in enumerate(ACTS)}

ACT_FULL_NAMES = {
    DialogueAct.ID: "information delivery",
    DialogueAct.IRQ: "information request",
    DialogueAct.YNQ: "yes/no question",
    DialogueAct.CRQ: "clarification request",
    DialogueAct.ORQ: "opinion request",
    DialogueAct.CD: "clarification delivery",
    DialogueAct.PA: "positive answer",
    DialogueAct.NA: "negative answer",
    DialogueAct.OD: "opinion delivery",
    DialogueAct.GT: "greeting",
    DialogueAct.ACK: "acknowledgment",
    DialogueAct.GC: "general chit-chat",
}


class CorpusError(Exception):
    """Raised for unreadable or structurally invalid corpus data."""


@dataclass(frozen=True)
class Utterance:
    dialogue_id: str
    turn_index: int
    speaker: str
    text: str
    act: DialogueAct


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Utterance, ...]

    def __len__(self) -> int:
        return len(self.turns)


@dataclass(frozen=True)
class Corpus:
    dialogues: tuple[Dialogue, ...]
    split_tag: str = "unsplit"

    def __len__(self) -> int:
        return len(self.dialogues)

    @property
    def n_utterances(self) -> int:
        return sum(len(d) for d in self.dialogues)

    def utterances(self):
        for d in self.dialogues:
            yield from d.turns


@dataclass(frozen=True)
class Context:
    """The most recent (text, act) pairs preceding a generation target."""

    window: tuple[tuple[str, DialogueAct], ...]
    k: int


@dataclass(frozen=True)
class Violation:
    dialogue_id: str
    kind: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


# ---------------------------------------------------------------------------
# File I/O

_RECORD_FIELDS = ("dialogue_id", "turn_index", "speaker", "text", "act")


def _record_line(u: Utterance) -> str:
    rec = {
        "dialogue_id": u.dialogue_id,
        "turn_index": u.turn_index,
        "speaker": u.speaker,
        "text": u.text,
        "act": u.act.value,
    }
    return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the canonical line-per-utterance form; dialogues in corpus order."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus.dialogues:
            for u in d.turns:
                fh.write(_record_line(u) + "\n")


def load_corpus(path: str | Path, split_tag: str = "unsplit") -> Corpus:
    """Load a JSONL corpus file, reconstructing turn order by (dialogue_id, turn_index).

    Raises CorpusError naming the offending line for malformed records, unknown
    act codes, multi-label acts, unknown speakers, and duplicate turn keys.
    Soft invariants (turn-index gaps, empty text) are left to ``validate``.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")

    by_dialogue: dict[str, dict[int, Utterance]] = {}
    order: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: malformed record ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusError(f"line {lineno}: record is not a key-value object")
            missing = [f for f in _RECORD_FIELDS if f not in rec]
            if missing:
                raise CorpusError(f"line {lineno}: missing fields {missing}")
            if isinstance(rec["act"], (list, tuple)):
                raise CorpusError(f"line {lineno}: multi-label acts are not supported")
            try:
                act = DialogueAct.parse(rec["act"])
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from None
            speaker = rec["speaker"]
            if speaker not in SPEAKERS:
                raise CorpusError(f"line {lineno}: unknown speaker {speaker!r}")
            turn_index = rec["turn_index"]
            if not isinstance(turn_index, int) or turn_index < 0:
                raise CorpusError(f"line {lineno}: turn_index must be a non-negative integer")
            did = str(rec["dialogue_id"])
            turns = by_dialogue.setdefault(did, {})
            if did not in order:
                order.append(did)
            if turn_index in turns:
                raise CorpusError(f"line {lineno}: duplicate turn ({did!r}, {turn_index})")
            turns[turn_index] = Utterance(did, turn_index, speaker, rec["text"], act)

    dialogues = tuple(
        Dialogue(did, tuple(by_dialogue[did][i] for i in sorted(by_dialogue[did])))
        for did in order
    )
    return Corpus(dialogues=dialogues, split_tag=split_tag)


# ---------------------------------------------------------------------------
# Validation

def validate(corpus: Corpus) -> ValidationReport:
    """Report per-dialogue invariant violations; never raises."""
    report = ValidationReport()
    seen_ids: set[str] = set()
    for d in corpus.dialogues:
        if d.id in seen_ids:
            report.violations.append(Violation(d.id, "duplicate_dialogue_id", d.id))
        seen_ids.add(d.id)
        if len(d) < 2:
            report.violations.append(
                Violation(d.id, "too_few_turns", f"{len(d)} turn(s), need at least 2")
            )
        for expected, u in enumerate(d.turns):
            if u.turn_index != expected:
                report.violations.append(
                    Violation(d.id, "turn_index_gap", f"expected index {expected}, found {u.turn_index}")
                )
                break
        for u in d.turns:
            if not u.text.strip():
                report.violations.append(
                    Violation(d.id, "empty_text", f"turn {u.turn_index} is empty after trimming")
                )
    return report


# ---------------------------------------------------------------------------
# Splitting and windowing

def split(
    corpus: Corpus, fractions: tuple[float, float, float], seed: int
) -> tuple[Corpus, Corpus, Corpus]:
    """Dialogue-level train/validation/test partition, deterministic given seed."""
    if any(f < 0 or f > 1 for f in fractions):
        raise ValueError(f"fractions must lie in [0,1], got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions} (sum {sum(fractions)})")

    n = len(corpus.dialogues)
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    n_train = round(n * fractions[0])
    n_val = round(n * fractions[1])
    n_val = min(n_val, n - n_train)
    train_ix = set(indices[:n_train])
    val_ix = set(indices[n_train : n_train + n_val])

    def pick(selector, tag: str) -> Corpus:
        return Corpus(
            dialogues=tuple(d for i, d in enumerate(corpus.dialogues) if selector(i)),
            split_tag=tag,
        )

    return (
        pick(lambda i: i in train_ix, "train"),
        pick(lambda i: i in val_ix, "validation"),
        pick(lambda i: i not in train_ix and i not in val_ix, "test"),
    )


def context_window(dialogue: Dialogue, t: int, k: int) -> Context:
    """Turns max(0, t-k+1)..t inclusive, with their acts."""
    if k < 1:
        raise ValueError(f"window size k must be >= 1, got {k}")
    if not 0 <= t < len(dialogue):
        raise ValueError(f"turn index {t} out of range for dialogue of length {len(dialogue)}")
    lo = max(0, t - k + 1)
    window = tuple((u.text, u.act) for u in dialogue.turns[lo : t + 1])
    return Context(window=window, k=k)


def act_transition_counts(corpus: Corpus) -> np.ndarray:
    """12x12 matrix counting adjacent-turn act pairs; cell (x, y) = #(x followed by y)."""
    counts = np.zeros((N_ACTS, N_ACTS), dtype=np.int64)
    for d in corpus.dialogues:
        for prev, nxt in zip(d.turns, d.turns[1:]):
            counts[prev.act.index, nxt.act.index] += 1
    return counts


# ---------------------------------------------------------------------------
# Tokenization and vocabulary

PAD, BOS, EOS, UNK, SEP_SPEAKER, SEP_ACT = range(6)
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "<sep-speaker>", "<sep-act>")

_TOKEN_RE = re.compile(r"[\w']+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace-plus-punctuation split; punctuation marks are tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Frequency-capped token table with a fixed 6-entry special-token prefix."""

    def __init__(self, surface_tokens: list[str]):
        self.tokens: list[str] = list(SPECIAL_TOKENS) + list(surface_tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self._ids.get(t, UNK) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def encode_text(self, text: str) -> list[int]:
        return self.encode(tokenize(text))

    def decode_text(self, ids: list[int]) -> str:
        """Surface text for a token-id sequence, dropping special tokens."""
        return " ".join(self.tokens[i] for i in ids if i >= len(SPECIAL_TOKENS))

    def content_hash(self) -> str:
        digest = hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()
        return digest

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        if tokens[: len(SPECIAL_TOKENS)] != list(SPECIAL_TOKENS):
            raise CorpusError(f"vocabulary file {path} lacks the special-token header")
        return cls(tokens[len(SPECIAL_TOKENS) :])


def structural_tokens(u: Utterance) -> list[str]:
    """Tokens the input encoder emits for a turn besides its text: speaker and act."""
    return [u.speaker, u.act.value.lower()]


def build_vocab(corpus: Corpus, max_size: int = 8192, min_freq: int = 1) -> Vocabulary:
    """Most frequent tokens (frequency desc, then lexicographic), capped at max_size.

    Speaker names and act codes are counted alongside text tokens because the
    model's input encoding emits them once per turn.
    """
    if max_size < len(SPECIAL_TOKENS) + 2:
        raise ValueError(f"max_size must be >= 8, got {max_size}")
    counts: Counter[str] = Counter()
    for u in corpus.utterances():
        counts.update(tokenize(u.text))
        counts.update(structural_tokens(u))
    ranked = sorted(
        (tok for tok, c in counts.items() if c >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    room = max_size - len(SPECIAL_TOKENS)
    return Vocabulary(ranked[:room])
