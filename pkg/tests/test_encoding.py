import pytest

from actdial.corpus import (
    BOS,
    EOS,
    SEP_ACT,
    SEP_SPEAKER,
    Corpus,
    Dialogue,
    DialogueAct,
    Utterance,
    build_vocab,
)
from actdial.encoding import (
    encode_example,
    encode_prompt,
    encode_turn,
    make_training_examples,
)


def utt(i, text, act=DialogueAct.ID, did="d"):
    speaker = "client" if i % 2 == 0 else "therapist"
    return Utterance(did, i, speaker, text, act)


@pytest.fixture()
def setting():
    turns = tuple(
        utt(i, t, a)
        for i, (t, a) in enumerate(
            [
                ("hello there", DialogueAct.GT),
                ("hi how are you", DialogueAct.GT),
                ("not great lately", DialogueAct.ID),
                ("what happened", DialogueAct.IRQ),
                ("work stress mostly", DialogueAct.ID),
                ("tell me more", DialogueAct.IRQ),
            ]
        )
    )
    corpus = Corpus((Dialogue("d", turns),))
    return corpus, build_vocab(corpus, max_size=128)


def test_turn_layout(setting):
    corpus, vocab = setting
    u = corpus.dialogues[0].turns[0]
    ids = encode_turn(vocab, u)
    assert ids[0] == SEP_SPEAKER
    assert vocab.tokens[ids[1]] == "client"
    assert ids[2] == SEP_ACT
    assert vocab.tokens[ids[3]] == "gt"
    assert vocab.decode(ids[4:]) == ["hello", "there"]


def test_prompt_framing(setting):
    corpus, vocab = setting
    turns = corpus.dialogues[0].turns[:2]
    ids = encode_prompt(vocab, turns, next_speaker="client")
    assert ids[0] == BOS
    assert ids[-2] == SEP_SPEAKER
    assert vocab.tokens[ids[-1]] == "client"


def test_prompt_with_act_header(setting):
    _, vocab = setting
    ids = encode_prompt(vocab, [], "therapist", act=DialogueAct.IRQ)
    assert ids[-2] == SEP_ACT
    assert vocab.tokens[ids[-1]] == "irq"


def test_prompt_truncation_drops_oldest(setting):
    corpus, vocab = setting
    turns = corpus.dialogues[0].turns
    full = encode_prompt(vocab, turns, "therapist")
    cap = len(full) - 2
    truncated = encode_prompt(vocab, turns, "therapist", max_len=cap)
    assert len(truncated) <= cap
    # the most recent turn survives
    last_text = vocab.encode(["tell", "me", "more"])
    assert all(t in truncated for t in last_text)


def test_example_fields(setting):
    corpus, vocab = setting
    d = corpus.dialogues[0]
    ex = encode_example(vocab, d.turns[:3], d.turns[3], max_len=128)
    assert ex.tokens[-1] == EOS
    assert ex.response_start == ex.prompt_len + 2
    assert ex.tokens[ex.prompt_len] == SEP_ACT
    assert vocab.tokens[ex.tokens[ex.prompt_len + 1]] == "irq"
    assert ex.act_index == DialogueAct.IRQ.index
    assert ex.tokens[ex.prompt_len - 2] == SEP_SPEAKER
    assert vocab.tokens[ex.tokens[ex.prompt_len - 1]] == "therapist"


def test_example_truncates_but_keeps_eos(setting):
    corpus, vocab = setting
    d = corpus.dialogues[0]
    ex = encode_example(vocab, d.turns[:3], d.turns[3], max_len=24)
    assert len(ex.tokens) <= 24
    assert ex.tokens[-1] == EOS
    assert ex.response_start > ex.prompt_len


def test_training_example_count(setting):
    corpus, vocab = setting
    examples = make_training_examples(vocab, corpus, k=2, max_len=128)
    assert len(examples) == sum(len(d) - 1 for d in corpus.dialogues)
    for ex in examples:
        assert 0 < ex.prompt_len < ex.response_start < len(ex.tokens)
