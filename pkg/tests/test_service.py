"""HTTP service tests: session lifecycle, alternation, errors, persistence."""

import json

import pytest
from fastapi.testclient import TestClient

from actdial.corpus import ACTS, build_vocab, load_corpus, validate
from actdial.model import (
    EOS,
    GenerationResult,
    MultiHeadModel,
    SFTConfig,
    freeze_reference,
    seed_all,
    supervised_train,
)
from actdial.service import FALLBACK_TEXT, SessionEngine, SessionOptions, create_app

from helpers import tiny_config, tiny_corpus

ACT_CODES = {a.value for a in ACTS}


@pytest.fixture(scope="module")
def stack(tmp_path_factory):
    seed_all(23, single_thread=True)
    corpus = tiny_corpus(n_dialogues=4, n_turns=4, seed=2)
    vocab = build_vocab(corpus)
    model = MultiHeadModel(tiny_config(vocab_size=len(vocab), max_seq_len=96))
    supervised_train(model, corpus, vocab, SFTConfig(epochs=2, lr=2e-3, batch_size=8, seed=0))
    model = freeze_reference(model)
    persist = tmp_path_factory.mktemp("sessions")
    app = create_app(model, vocab, checkpoint_label="test.ckpt", persist_dir=str(persist))
    return model, vocab, app, persist


@pytest.fixture()
def client(stack):
    _, _, app, _ = stack
    return TestClient(app)


SEED_2 = [
    {"speaker": "client", "text": "i feel worried about work", "act": "ID"},
    {"speaker": "therapist", "text": "what worries you most ?", "act": "IRQ"},
]


def make_session(client, setup="natural", seed=None, options=None):
    body = {"setup": setup, "seed_context": seed or SEED_2}
    if options:
        body["options"] = options
    r = client.post("/sessions", json=body)
    assert r.status_code == 200, r.text
    return r.json()["session_id"]


class TestHealth:
    def test_health_reports_checkpoint(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "model_checkpoint": "test.ckpt"}

    def test_cross_origin_requests_allowed(self, client):
        r = client.get("/health", headers={"Origin": "http://localhost:5173"})
        assert r.headers.get("access-control-allow-origin") == "*"


class TestCreate:
    def test_seed_only_transcript(self, client):
        sid = make_session(client)
        r = client.get(f"/sessions/{sid}/transcript")
        body = r.json()
        assert body["dialogue_id"] == sid
        assert len(body["turns"]) == 2
        assert [t["speaker"] for t in body["turns"]] == ["client", "therapist"]
        assert body["turns"][0]["text"] == SEED_2[0]["text"]

    def test_distinct_ids(self, client):
        assert make_session(client) != make_session(client)

    def test_empty_seed_rejected(self, client):
        r = client.post("/sessions", json={"setup": "natural", "seed_context": []})
        assert r.status_code == 422
        assert r.json()["error_code"] == "empty_seed"

    def test_unknown_setup_rejected(self, client):
        r = client.post("/sessions", json={"setup": "other", "seed_context": SEED_2})
        assert r.status_code == 422
        assert r.json()["error_code"] == "validation_error"

    def test_bad_act_code_rejected(self, client):
        seed = [{"speaker": "client", "text": "hi", "act": "NOPE"}]
        r = client.post("/sessions", json={"setup": "natural", "seed_context": seed})
        assert r.status_code == 422
        assert r.json()["error_code"] == "invalid_turn"

    def test_seed_acts_predicted_when_missing(self, client):
        seed = [{"speaker": "client", "text": "hello there"}]
        sid = make_session(client, seed=seed)
        turns = client.get(f"/sessions/{sid}/transcript").json()["turns"]
        assert turns[0]["act"] in ACT_CODES


class TestNaturalSetup:
    def test_utterance_appends_two_turns(self, client):
        sid = make_session(client)
        r = client.post(f"/sessions/{sid}/utterance", json={"text": "mostly deadlines"})
        assert r.status_code == 200, r.text
        turn = r.json()
        assert turn["speaker"] == "therapist"
        assert turn["act"] in ACT_CODES
        assert 0.0 < turn["act_confidence"] <= 1.0
        assert turn["text"]
        turns = client.get(f"/sessions/{sid}/transcript").json()["turns"]
        assert len(turns) == 4
        assert turns[2]["speaker"] == "client"
        assert turns[2]["act"] in ACT_CODES
        assert turns[3]["text"] == turn["text"]

    def test_twin_sessions_identical_replies(self, client):
        a, b = make_session(client), make_session(client)
        ra = client.post(f"/sessions/{a}/utterance", json={"text": "the deadlines"})
        rb = client.post(f"/sessions/{b}/utterance", json={"text": "the deadlines"})
        assert ra.json() == rb.json()

    def test_empty_text_rejected(self, client):
        sid = make_session(client)
        r = client.post(f"/sessions/{sid}/utterance", json={"text": "   "})
        assert r.status_code == 422
        assert r.json()["error_code"] == "invalid_turn"

    def test_step_on_natural_rejected(self, client):
        sid = make_session(client)
        r = client.post(f"/sessions/{sid}/step")
        assert r.status_code == 409
        assert r.json()["error_code"] == "wrong_setup"

    def test_alternation_invariant_over_exchanges(self, client):
        sid = make_session(client)
        for text in ("one", "two", "three"):
            client.post(f"/sessions/{sid}/utterance", json={"text": text})
            turns = client.get(f"/sessions/{sid}/transcript").json()["turns"]
            post_seed = turns[2:]
            n_client = sum(1 for t in post_seed if t["speaker"] == "client")
            n_agent = sum(1 for t in post_seed if t["speaker"] == "therapist")
            assert abs(n_client - n_agent) <= 1


class TestSyntheticSetup:
    def test_steps_alternate_roles(self, client):
        sid = make_session(client, setup="synthetic")
        speakers = []
        for _ in range(4):
            r = client.post(f"/sessions/{sid}/step")
            assert r.status_code == 200
            speakers.append(r.json()["speaker"])
        assert speakers[0] == "client"
        assert all(a != b for a, b in zip(speakers, speakers[1:]))
        turns = client.get(f"/sessions/{sid}/transcript").json()["turns"]
        assert len(turns) == len(SEED_2) + 4

    def test_utterance_on_synthetic_rejected(self, client):
        sid = make_session(client, setup="synthetic")
        r = client.post(f"/sessions/{sid}/utterance", json={"text": "hi"})
        assert r.status_code == 409
        assert r.json()["error_code"] == "wrong_setup"


class TestUnknownSession:
    def test_all_operations_404(self, client):
        for method, path, body in (
            ("post", "/sessions/nope/utterance", {"text": "x"}),
            ("post", "/sessions/nope/step", None),
            ("get", "/sessions/nope/transcript", None),
        ):
            r = getattr(client, method)(path, json=body) if body else getattr(client, method)(path)
            assert r.status_code == 404
            assert r.json()["error_code"] == "unknown_session"


class TestTranscriptExport:
    def test_jsonl_reloads_as_corpus(self, client, tmp_path):
        sid = make_session(client)
        client.post(f"/sessions/{sid}/utterance", json={"text": "budget troubles"})
        r = client.get(f"/sessions/{sid}/transcript", params={"format": "jsonl"})
        path = tmp_path / "session.jsonl"
        path.write_text(r.text, encoding="utf-8")
        corpus = load_corpus(path)
        assert validate(corpus).ok
        json_turns = client.get(f"/sessions/{sid}/transcript").json()["turns"]
        loaded = corpus.dialogues[0]
        assert len(loaded.turns) == len(json_turns) == 4
        for u, t in zip(loaded.turns, json_turns):
            assert (u.speaker, u.text, u.act.value) == (t["speaker"], t["text"], t["act"])

    def test_persisted_file_matches_export(self, client, stack):
        _, _, _, persist = stack
        sid = make_session(client, setup="synthetic")
        for _ in range(10):
            client.post(f"/sessions/{sid}/step")
        exported = client.get(f"/sessions/{sid}/transcript", params={"format": "jsonl"}).text
        on_disk = (persist / f"{sid}.jsonl").read_text(encoding="utf-8")
        assert on_disk == exported
        meta = json.loads((persist / f"{sid}.json").read_text(encoding="utf-8"))
        assert meta["setup"] == "synthetic"
        assert meta["options"]["temperature"] == 0.0


class TestConcurrencyGuard:
    def test_in_flight_turn_returns_busy(self, client, stack):
        _, _, app, _ = stack
        sid = make_session(client)
        session = app.state.engine._sessions[sid]
        assert session.lock.acquire(blocking=False)
        try:
            r = client.post(f"/sessions/{sid}/utterance", json={"text": "hello"})
            assert r.status_code == 409
            assert r.json()["error_code"] == "busy"
        finally:
            session.lock.release()


class TestFallbackText:
    def test_empty_generation_substituted(self, stack, monkeypatch):
        model, vocab, _, _ = stack
        engine = SessionEngine(model, vocab)
        session = engine.create(
            "synthetic",
            [("client", "hi there", None)],
            SessionOptions(max_new_tokens=4),
        )
        monkeypatch.setattr(
            model,
            "generate",
            lambda prompt, dec: GenerationResult(tokens=(EOS,), logprobs=(0.0,), stopped_at_eos=True),
        )
        turn = engine.step(session.id)
        assert turn.text == FALLBACK_TEXT
