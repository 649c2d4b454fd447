"""Shared factories for small models and corpora used across test modules."""

import random

from actdial.corpus import ACTS, Corpus, Dialogue, Utterance
from actdial.model import ModelConfig

WORDS = ["sleep", "work", "family", "worry", "calm", "talk", "listen", "rest"]


def tiny_config(vocab_size=64, max_seq_len=64):
    return ModelConfig(
        vocab_size=vocab_size,
        d_model=32,
        n_layers=2,
        n_heads=4,
        max_seq_len=max_seq_len,
        rac_gru_width=16,
        rac_attn_heads=2,
    )


def tiny_corpus(n_dialogues=6, n_turns=4, seed=0):
    rng = random.Random(seed)
    dialogues = []
    for j in range(n_dialogues):
        turns = []
        for i in range(n_turns):
            speaker = "client" if i % 2 == 0 else "therapist"
            text = " ".join(rng.choice(WORDS) for _ in range(rng.randint(2, 5)))
            turns.append(Utterance(f"d{j}", i, speaker, text, rng.choice(ACTS)))
        dialogues.append(Dialogue(f"d{j}", tuple(turns)))
    return Corpus(tuple(dialogues))
