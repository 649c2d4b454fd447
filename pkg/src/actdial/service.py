"""HTTP dialogue service: natural (human client / agent) and synthetic (agent / agent) sessions.

A session owns an append-only transcript seeded with priming turns. Agent turns are
produced by predicting the next act, then decoding a response conditioned on it.
Each session serializes its own mutations with a non-blocking lock; a second
in-flight request receives 409 busy. Transcripts persist as corpus-format JSONL so
a finished session is immediately reusable as training data.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import asdict, dataclass
from typing import Literal, Optional

import torch
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .corpus import (
    SPEAKERS,
    CorpusError,
    Dialogue,
    DialogueAct,
    Utterance,
    Vocabulary,
)
from .encoding import encode_prompt
from .model import DecodingParams, MultiHeadModel
from .reward import ActClassifier

NATURAL = "natural"
SYNTHETIC = "synthetic"
AGENT_SPEAKER = "therapist"
CLIENT_SPEAKER = "client"

# Decoded replies can be empty when the first sampled token is end-of-sequence;
# transcripts forbid empty text, so substitute a minimal acknowledgment.
FALLBACK_TEXT = "hmm."


class ServiceError(Exception):
    status_code = 400
    error_code = "error"


class UnknownSessionError(ServiceError):
    status_code = 404
    error_code = "unknown_session"


class SessionBusyError(ServiceError):
    status_code = 409
    error_code = "busy"


class WrongSetupError(ServiceError):
    status_code = 409
    error_code = "wrong_setup"


class EmptySeedError(ServiceError):
    status_code = 422
    error_code = "empty_seed"


class BadTurnError(ServiceError):
    status_code = 422
    error_code = "invalid_turn"


@dataclass(frozen=True)
class SessionOptions:
    """Per-session generation settings, fixed at creation."""

    temperature: float = 0.0
    top_k: int = 0
    top_p: float = 1.0
    max_new_tokens: int = 32
    context_k: int = 4
    seed: int = 0


@dataclass(frozen=True)
class AgentTurn:
    speaker: str
    text: str
    act: DialogueAct
    act_confidence: float
    turn_index: int


class Session:
    def __init__(self, session_id: str, setup: str, options: SessionOptions):
        self.id = session_id
        self.setup = setup
        self.options = options
        self.turns: list[Utterance] = []
        self.lock = threading.Lock()


class SessionEngine:
    """Session registry plus the generation pipeline shared by all sessions."""

    def __init__(
        self,
        model: MultiHeadModel,
        vocab: Vocabulary,
        persist_dir: Optional[str] = None,
    ):
        model.eval()
        self.model = model
        self.vocab = vocab
        self.persist_dir = persist_dir
        if persist_dir:
            os.makedirs(persist_dir, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()

    # -- registry ----------------------------------------------------------

    def _get(self, session_id: str) -> Session:
        sess = self._sessions.get(session_id)
        if sess is None:
            raise UnknownSessionError(f"no session with id {session_id!r}")
        return sess

    def create(
        self,
        setup: str,
        seed_turns: list[tuple[str, str, Optional[DialogueAct]]],
        options: SessionOptions = SessionOptions(),
    ) -> Session:
        if setup not in (NATURAL, SYNTHETIC):
            raise BadTurnError(f"unknown setup {setup!r}")
        if not seed_turns:
            raise EmptySeedError("seed_context must contain at least one turn")
        session = Session(uuid.uuid4().hex, setup, options)
        for speaker, text, act in seed_turns:
            if speaker not in SPEAKERS:
                raise BadTurnError(f"unknown speaker {speaker!r}")
            if not text.strip():
                raise BadTurnError("seed turn text is empty")
            if act is None:
                act, _ = self._predict_act(session, speaker)
            turn = Utterance(session.id, len(session.turns), speaker, text, act)
            session.turns.append(turn)
        with self._registry_lock:
            self._sessions[session.id] = session
        self._persist_meta(session)
        for turn in session.turns:
            self._persist_turn(turn)
        return session

    # -- generation --------------------------------------------------------

    def _predict_act(self, session: Session, next_speaker: str) -> tuple[DialogueAct, float]:
        clf = ActClassifier(self.model, self.vocab, context_k=session.options.context_k)
        probs = clf.probabilities(session.turns, next_speaker)
        idx = int(torch.argmax(probs))
        return DialogueAct.from_index(idx), float(probs[idx])

    def _generate_turn(self, session: Session, speaker: str) -> AgentTurn:
        opts = session.options
        act, confidence = self._predict_act(session, speaker)
        context = session.turns[-opts.context_k :]
        budget = self.model.config.max_seq_len - opts.max_new_tokens
        try:
            prompt = encode_prompt(self.vocab, context, speaker, act=act, max_len=budget)
        except ValueError as exc:
            raise BadTurnError(str(exc)) from exc
        dec = DecodingParams(
            temperature=opts.temperature,
            top_k=opts.top_k,
            top_p=opts.top_p,
            max_new_tokens=opts.max_new_tokens,
            seed=opts.seed + 9973 * len(session.turns),
        )
        result = self.model.generate(prompt, dec)
        text = self.vocab.decode_text(result.tokens) or FALLBACK_TEXT
        turn = Utterance(session.id, len(session.turns), speaker, text, act)
        session.turns.append(turn)
        self._persist_turn(turn)
        return AgentTurn(speaker, text, act, confidence, turn.turn_index)

    # -- operations --------------------------------------------------------

    def post_utterance(self, session_id: str, text: str) -> AgentTurn:
        sess = self._get(session_id)
        if sess.setup != NATURAL:
            raise WrongSetupError("post_utterance requires a natural-setup session")
        if not text.strip():
            raise BadTurnError("utterance text is empty")
        if not sess.lock.acquire(blocking=False):
            raise SessionBusyError("a turn is already in flight for this session")
        try:
            act, _ = self._predict_act(sess, CLIENT_SPEAKER)
            turn = Utterance(sess.id, len(sess.turns), CLIENT_SPEAKER, text, act)
            sess.turns.append(turn)
            self._persist_turn(turn)
            return self._generate_turn(sess, AGENT_SPEAKER)
        finally:
            sess.lock.release()

    def step(self, session_id: str) -> AgentTurn:
        sess = self._get(session_id)
        if sess.setup != SYNTHETIC:
            raise WrongSetupError("step requires a synthetic-setup session")
        if not sess.lock.acquire(blocking=False):
            raise SessionBusyError("a turn is already in flight for this session")
        try:
            last = sess.turns[-1].speaker
            speaker = CLIENT_SPEAKER if last == AGENT_SPEAKER else AGENT_SPEAKER
            return self._generate_turn(sess, speaker)
        finally:
            sess.lock.release()

    def transcript(self, session_id: str) -> Dialogue:
        sess = self._get(session_id)
        return Dialogue(sess.id, tuple(sess.turns))

    def transcript_jsonl(self, session_id: str) -> str:
        dlg = self.transcript(session_id)
        return "".join(_turn_line(u) for u in dlg.turns)

    # -- persistence -------------------------------------------------------

    def _persist_meta(self, session: Session) -> None:
        if not self.persist_dir:
            return
        path = os.path.join(self.persist_dir, f"{session.id}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {"setup": session.setup, "options": asdict(session.options)},
                fh,
                sort_keys=True,
            )

    def _persist_turn(self, turn: Utterance) -> None:
        if not self.persist_dir:
            return
        path = os.path.join(self.persist_dir, f"{turn.dialogue_id}.jsonl")
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(_turn_line(turn))


def _turn_line(u: Utterance) -> str:
    record = {
        "dialogue_id": u.dialogue_id,
        "turn_index": u.turn_index,
        "speaker": u.speaker,
        "text": u.text,
        "act": u.act.value,
    }
    return json.dumps(record, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# HTTP layer


class TurnIn(BaseModel):
    speaker: Literal["therapist", "client"]
    text: str
    act: Optional[str] = None


class OptionsIn(BaseModel):
    temperature: float = 0.0
    top_k: int = Field(default=0, ge=0)
    top_p: float = Field(default=1.0, gt=0.0, le=1.0)
    max_new_tokens: int = Field(default=32, ge=1)
    context_k: int = Field(default=4, ge=1)
    seed: int = 0


class CreateSessionIn(BaseModel):
    setup: Literal["natural", "synthetic"]
    seed_context: list[TurnIn]
    options: OptionsIn = OptionsIn()


class CreateSessionOut(BaseModel):
    session_id: str


class UtteranceIn(BaseModel):
    text: str


class AgentTurnOut(BaseModel):
    speaker: str
    text: str
    act: str
    act_confidence: float
    turn_index: int


class TranscriptTurnOut(BaseModel):
    dialogue_id: str
    turn_index: int
    speaker: str
    text: str
    act: str


class TranscriptOut(BaseModel):
    dialogue_id: str
    turns: list[TranscriptTurnOut]


class HealthOut(BaseModel):
    status: str
    model_checkpoint: str


def _agent_turn_out(turn: AgentTurn) -> AgentTurnOut:
    return AgentTurnOut(
        speaker=turn.speaker,
        text=turn.text,
        act=turn.act.value,
        act_confidence=turn.act_confidence,
        turn_index=turn.turn_index,
    )


def create_app(
    model: MultiHeadModel,
    vocab: Vocabulary,
    checkpoint_label: str = "in-memory",
    persist_dir: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="actdial service")
    # browser clients are served from a different origin than the API
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["GET", "POST"],
        allow_headers=["*"],
    )
    engine = SessionEngine(model, vocab, persist_dir=persist_dir)
    app.state.engine = engine

    @app.exception_handler(ServiceError)
    def _service_error(request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status_code,
            content={"error_code": exc.error_code, "message": str(exc)},
        )

    @app.exception_handler(RequestValidationError)
    def _validation_error(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        loc = ".".join(str(p) for p in first.get("loc", ()))
        return JSONResponse(
            status_code=422,
            content={
                "error_code": "validation_error",
                "message": f"{loc}: {first.get('msg', 'invalid request')}",
            },
        )

    @app.get("/health", response_model=HealthOut)
    def health() -> HealthOut:
        return HealthOut(status="ok", model_checkpoint=checkpoint_label)

    @app.post("/sessions", response_model=CreateSessionOut)
    def create_session(body: CreateSessionIn) -> CreateSessionOut:
        seed_turns = []
        for t in body.seed_context:
            act = None
            if t.act is not None:
                try:
                    act = DialogueAct.parse(t.act)
                except CorpusError as exc:
                    raise BadTurnError(str(exc)) from exc
            seed_turns.append((t.speaker, t.text, act))
        options = SessionOptions(**body.options.model_dump())
        session = engine.create(body.setup, seed_turns, options)
        return CreateSessionOut(session_id=session.id)

    @app.post("/sessions/{session_id}/utterance", response_model=AgentTurnOut)
    def post_utterance(session_id: str, body: UtteranceIn) -> AgentTurnOut:
        return _agent_turn_out(engine.post_utterance(session_id, body.text))

    @app.post("/sessions/{session_id}/step", response_model=AgentTurnOut)
    def step(session_id: str) -> AgentTurnOut:
        return _agent_turn_out(engine.step(session_id))

    @app.get("/sessions/{session_id}/transcript")
    def transcript(session_id: str, format: str = "json"):
        if format == "jsonl":
            return PlainTextResponse(engine.transcript_jsonl(session_id))
        dlg = engine.transcript(session_id)
        out = TranscriptOut(
            dialogue_id=dlg.id,
            turns=[
                TranscriptTurnOut(
                    dialogue_id=u.dialogue_id,
                    turn_index=u.turn_index,
                    speaker=u.speaker,
                    text=u.text,
                    act=u.act.value,
                )
                for u in dlg.turns
            ],
        )
        return JSONResponse(out.model_dump())

    return app
