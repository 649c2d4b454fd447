"""Synthetic corpora with known structure, used by the test suite and by the
demo commands: an act-chain corpus whose response-act is a deterministic
function of the current act, a small reinforcement-learning benchmark with
known target continuations, and a schema fixture with exact corpus totals.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .corpus import ACTS, Corpus, Dialogue, DialogueAct, Utterance

# Response-act follows deterministically from the current act. Requests map to
# their matching deliveries; deliveries and answers feed back into questions or
# acknowledgments, keeping every chain inside the 12-code set.
ACT_SUCCESSOR: dict[DialogueAct, DialogueAct] = {
    DialogueAct.IRQ: DialogueAct.ID,
    DialogueAct.YNQ: DialogueAct.PA,
    DialogueAct.CRQ: DialogueAct.CD,
    DialogueAct.ORQ: DialogueAct.OD,
    DialogueAct.ID: DialogueAct.ACK,
    DialogueAct.CD: DialogueAct.YNQ,
    DialogueAct.PA: DialogueAct.GC,
    DialogueAct.NA: DialogueAct.ORQ,
    DialogueAct.OD: DialogueAct.IRQ,
    DialogueAct.GT: DialogueAct.IRQ,
    DialogueAct.ACK: DialogueAct.CRQ,
    DialogueAct.GC: DialogueAct.GT,
}

_ACT_TEMPLATES: dict[DialogueAct, list[str]] = {
    DialogueAct.ID: ["i have been feeling {w} lately", "my {w} has been difficult"],
    DialogueAct.IRQ: ["what happened with your {w}", "tell me about the {w}"],
    DialogueAct.YNQ: ["did the {w} help you", "have you tried {w} before"],
    DialogueAct.CRQ: ["what do you mean by {w}", "can you explain the {w} part"],
    DialogueAct.ORQ: ["how do you feel about {w}", "what is your view on {w}"],
    DialogueAct.CD: ["i meant the {w} from last week", "by that i mean {w}"],
    DialogueAct.PA: ["yes the {w} helped", "yes i did try {w}"],
    DialogueAct.NA: ["no the {w} did not work", "no i have not tried {w}"],
    DialogueAct.OD: ["i think {w} matters a lot", "in my opinion {w} is hard"],
    DialogueAct.GT: ["hello good to see you", "hi welcome back today"],
    DialogueAct.ACK: ["i see that makes sense", "right i understand that"],
    DialogueAct.GC: ["the weather was {w} this week", "my week was mostly {w}"],
}

_FILLERS = ["sleep", "work", "family", "stress", "money", "school", "therapy", "rest"]


def _act_text(act: DialogueAct, rng: random.Random) -> str:
    template = rng.choice(_ACT_TEMPLATES[act])
    return template.replace("{w}", rng.choice(_FILLERS))


def deterministic_act_corpus(
    n_dialogues: int = 60, n_turns: int = 8, seed: int = 0
) -> Corpus:
    """Dialogues whose act sequence follows ACT_SUCCESSOR exactly; texts are
    act-specific templates so the mapping is visible in both channels."""
    rng = random.Random(seed)
    dialogues = []
    for j in range(n_dialogues):
        act = rng.choice(ACTS)
        turns = []
        for i in range(n_turns):
            speaker = "client" if i % 2 == 0 else "therapist"
            turns.append(Utterance(f"chain-{j}", i, speaker, _act_text(act, rng), act))
            act = ACT_SUCCESSOR[act]
        dialogues.append(Dialogue(f"chain-{j}", tuple(turns)))
    return Corpus(tuple(dialogues))


# --- reinforcement-learning benchmark ---

BENCH_TOPICS = ("sleep", "work", "family", "stress", "money", "school")
BENCH_CLIENT_TEXT = "i want to discuss {topic}"
BENCH_TARGET_TEXT = "let us talk about {topic} today"
BENCH_DISTRACTOR_TEXT = "hmm okay i see"


def bench_target_for(topic: str) -> str:
    return BENCH_TARGET_TEXT.replace("{topic}", topic)


@dataclass(frozen=True)
class PPOBenchmark:
    """A pretraining corpus whose gold responses are diluted with a generic
    distractor, and a task corpus holding only the true targets. A policy
    cloned from the diluted corpus has obvious reward headroom."""

    sft_corpus: Corpus
    task_corpus: Corpus


def ppo_benchmark(
    seed: int = 0,
    pairs_per_topic: int = 8,
    distractor_rate: float = 0.5,
) -> PPOBenchmark:
    rng = random.Random(seed)
    sft, task = [], []
    counter = 0
    for topic in BENCH_TOPICS:
        client_text = BENCH_CLIENT_TEXT.replace("{topic}", topic)
        target_text = bench_target_for(topic)
        for _ in range(pairs_per_topic):
            use_distractor = rng.random() < distractor_rate
            # the distractor carries the same act as the target, so only the
            # reward signal separates them after cloning
            text = BENCH_DISTRACTOR_TEXT if use_distractor else target_text
            response = Utterance(f"sft-{counter}", 1, "therapist", text, DialogueAct.IRQ)
            client = Utterance(f"sft-{counter}", 0, "client", client_text, DialogueAct.ID)
            sft.append(Dialogue(f"sft-{counter}", (client, response)))
            counter += 1
        task.append(
            Dialogue(
                f"task-{topic}",
                (
                    Utterance(f"task-{topic}", 0, "client", client_text, DialogueAct.ID),
                    Utterance(f"task-{topic}", 1, "therapist", target_text, DialogueAct.IRQ),
                ),
            )
        )
    return PPOBenchmark(Corpus(tuple(sft)), Corpus(tuple(task)))


# --- schema fixture with exact totals ---

def hope_schema_fixture(
    n_dialogues: int = 212, n_utterances: int = 12854, seed: int = 0
) -> Corpus:
    """A corpus with exactly the requested dialogue and utterance totals.

    Acts follow a seeded Markov chain; speakers mostly alternate with
    occasional consecutive same-speaker turns.
    """
    if n_utterances < 2 * n_dialogues:
        raise ValueError("need at least 2 utterances per dialogue")
    rng = random.Random(seed)
    base = n_utterances // n_dialogues
    lengths = [base] * n_dialogues
    for _ in range(n_utterances - base * n_dialogues):
        lengths[rng.randrange(n_dialogues)] += 1
    # jitter lengths while preserving the total
    for _ in range(n_dialogues):
        a, b = rng.randrange(n_dialogues), rng.randrange(n_dialogues)
        shift = rng.randint(0, 10)
        if lengths[a] - shift >= 2:
            lengths[a] -= shift
            lengths[b] += shift

    dialogues = []
    for j, length in enumerate(lengths):
        did = f"hope-fixture-{j:03d}"
        act = rng.choice(ACTS)
        speaker = rng.choice(("therapist", "client"))
        turns = []
        for i in range(length):
            turns.append(Utterance(did, i, speaker, _act_text(act, rng), act))
            # mostly alternate; sometimes the same speaker continues
            if rng.random() > 0.12:
                speaker = "client" if speaker == "therapist" else "therapist"
            act = rng.choices(ACTS, weights=[rng.random() + 0.05 for _ in ACTS], k=1)[0] \
                if rng.random() < 0.35 else ACT_SUCCESSOR[act]
        dialogues.append(Dialogue(did, tuple(turns)))
    corpus = Corpus(tuple(dialogues))
    assert corpus.n_utterances == n_utterances
    assert len(corpus.dialogues) == n_dialogues
    return corpus
