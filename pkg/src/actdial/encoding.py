"""Serialization of dialogue turns into token-id sequences for the model.

Layout per turn: ``<sep-speaker> SPEAKER <sep-act> ACT text...``. A training
sequence is `<bos>` + context turns + response header + response text + `<eos>`.
The response header (`<sep-speaker> SPEAKER <sep-act> ACT`) is input-only: the
next-token loss covers the response text and the closing `<eos>`, while the act
token is supplied by the act classifier (training: gold; inference: predicted).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import (
    BOS,
    EOS,
    SEP_ACT,
    SEP_SPEAKER,
    Corpus,
    Dialogue,
    DialogueAct,
    Utterance,
    Vocabulary,
    tokenize,
)


@dataclass(frozen=True)
class TrainingExample:
    """One (context -> response) pair in token-id form.

    ``tokens[:prompt_len]`` is the context the act classifier reads (it ends
    with the response speaker marker). ``tokens[response_start:]`` are the
    next-token-supervised positions: response text plus the terminal EOS.
    """

    tokens: tuple[int, ...]
    prompt_len: int
    response_start: int
    act_index: int
    dialogue_id: str
    turn_index: int


def encode_turn(vocab: Vocabulary, u: Utterance) -> list[int]:
    ids = [SEP_SPEAKER, vocab.id_of(u.speaker), SEP_ACT, vocab.id_of(u.act.value.lower())]
    ids.extend(vocab.encode(tokenize(u.text)))
    return ids


def encode_prompt(
    vocab: Vocabulary,
    context_turns: Sequence[Utterance],
    next_speaker: str,
    act: DialogueAct | None = None,
    max_len: int | None = None,
) -> list[int]:
    """Token ids for a generation prompt.

    Ends with the next-speaker marker; when ``act`` is given the response-act
    header is appended so generation is conditioned on it. Oldest context turns
    are dropped first if ``max_len`` would be exceeded.
    """
    tail = [SEP_SPEAKER, vocab.id_of(next_speaker)]
    if act is not None:
        tail += [SEP_ACT, vocab.id_of(act.value.lower())]
    turns = [encode_turn(vocab, u) for u in context_turns]
    if max_len is not None:
        budget = max_len - 1 - len(tail)
        if budget < 0:
            raise ValueError(f"prompt budget {max_len} cannot hold even an empty context")
        while turns and sum(len(t) for t in turns) > budget:
            turns.pop(0)
    ids = [BOS]
    for t in turns:
        ids.extend(t)
    ids.extend(tail)
    return ids


def encode_example(
    vocab: Vocabulary,
    context_turns: Sequence[Utterance],
    response: Utterance,
    max_len: int,
) -> TrainingExample:
    """Build one supervised example; context turns are dropped oldest-first and
    the response text is right-truncated if the budget still overflows."""
    response_text = vocab.encode(tokenize(response.text))
    act_header = [SEP_ACT, vocab.id_of(response.act.value.lower())]
    # prompt + act header + text + EOS must fit max_len
    budget = max_len - len(act_header) - len(response_text) - 1
    prompt = encode_prompt(
        vocab, context_turns, response.speaker, max_len=max(budget, 3)
    )
    overflow = len(prompt) + len(act_header) + len(response_text) + 1 - max_len
    if overflow > 0:
        response_text = response_text[: max(len(response_text) - overflow, 1)]
    tokens = prompt + act_header + response_text + [EOS]
    if len(tokens) > max_len:
        raise ValueError(
            f"encoded example for ({response.dialogue_id!r}, {response.turn_index}) "
            f"exceeds max_len {max_len}"
        )
    return TrainingExample(
        tokens=tuple(tokens),
        prompt_len=len(prompt),
        response_start=len(prompt) + len(act_header),
        act_index=response.act.index,
        dialogue_id=response.dialogue_id,
        turn_index=response.turn_index,
    )


def examples_from_dialogue(
    vocab: Vocabulary, dialogue: Dialogue, k: int, max_len: int
) -> list[TrainingExample]:
    out = []
    for t in range(1, len(dialogue)):
        lo = max(0, t - k)
        out.append(
            encode_example(vocab, dialogue.turns[lo:t], dialogue.turns[t], max_len)
        )
    return out


def make_training_examples(
    vocab: Vocabulary, corpus: Corpus, k: int = 4, max_len: int = 256
) -> list[TrainingExample]:
    """Every turn with at least one predecessor becomes a target; its context
    is the preceding window of up to k turns."""
    out: list[TrainingExample] = []
    for d in corpus.dialogues:
        out.extend(examples_from_dialogue(vocab, d, k, max_len))
    return out
