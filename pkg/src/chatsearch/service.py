"""HTTP session service for interactive search with a human answerer.

Wraps the episode state machine in a suspension point: the service asks
the questions, the user supplies the answers. Sessions live in memory,
one lock each; mutations on a session are serialized and a submission
arriving while another is in flight gets a conflict error. Ranks appear
in responses only when the session was created with a hidden target id
(evaluation mode) — live users have no target to rank.

Endpoints: POST /sessions, GET /sessions/{id}, POST /sessions/{id}/answer,
POST /sessions/{id}/end, GET /healthz. Errors are {"code", "message"}.
"""

from __future__ import annotations

import threading
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .backends.base import BackendError, Backends
from .corpus import ImagePool, top_n_candidates
from .metrics import EpisodeLog, write_logs
from .numerics import derive_seed
from .orchestrator import (
    EpisodeConfig,
    EpisodeState,
    begin_round,
    complete_round,
    start_episode,
)


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class CreateSessionRequest(BaseModel):
    caption: str
    k: int | None = None
    target_id: str | None = None


class AnswerRequest(BaseModel):
    text: str


@dataclass
class SessionRuntime:
    id: str
    state: EpisodeState
    k: int
    created_at: str
    updated_at: str
    snapshots: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    ended: bool = False

    @property
    def done(self) -> bool:
        return self.state.status.terminal

    @property
    def query_id(self) -> str:
        return self.state.target_id or self.id


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class SessionService:
    """In-memory session registry over one shared pool and backend set."""

    def __init__(self, pool: ImagePool, backends: Backends, config: EpisodeConfig,
                 log_dir: str | Path | None = None, id_factory=None):
        if len(pool) == 0:
            raise ValueError("the service needs a non-empty pool")
        self.pool = pool
        self.backends = backends
        self.config = config
        self.log_dir = Path(log_dir) if log_dir else None
        self._id_factory = id_factory or (lambda: uuid.uuid4().hex)
        self._sessions: dict[str, SessionRuntime] = {}
        self._registry_lock = threading.Lock()

    # -- session lifecycle -------------------------------------------------

    def create(self, caption: str, k: int | None, target_id: str | None) -> dict:
        if not caption or not caption.strip():
            raise ApiError(400, "empty_caption", "caption must be non-empty")
        if target_id is not None and target_id not in self.pool:
            raise ApiError(400, "unknown_target", f"target id {target_id!r} not in pool")
        k = min(max(k or self.config.report_k, 1), len(self.pool))
        session_id = self._id_factory()
        # Same seed derivation as the batch runner, so an evaluation-mode
        # session replays exactly what run_episode would do.
        episode_seed = derive_seed(self.config.seed, target_id or session_id)
        try:
            state = start_episode(caption.strip(), self.pool, self.config,
                                  self.backends, target_id=target_id,
                                  episode_seed=episode_seed)
            session = SessionRuntime(id=session_id, state=state, k=k,
                                     created_at=_now(), updated_at=_now())
            session.snapshots.append(self._snapshot(session))
            if not session.done:
                begin_round(state, self.pool, self.backends)
        except BackendError as exc:
            raise ApiError(502, "backend_error", str(exc)) from exc
        with self._registry_lock:
            self._sessions[session.id] = session
        return {
            "session_id": session.id,
            "done": session.done,
            "question": session.state.pending_question,
            "round": session.snapshots[0],
        }

    def answer(self, session_id: str, text: str) -> dict:
        session = self._get(session_id)
        if not session.lock.acquire(blocking=False):
            raise ApiError(409, "conflict", "another submission is in progress")
        try:
            if session.ended or session.done or session.state.pending_question is None:
                raise ApiError(409, "conflict", "no pending question to answer")
            if not text or not text.strip():
                raise ApiError(400, "empty_answer", "answer must be non-empty")
            try:
                complete_round(session.state, self.pool, self.backends, text)
                snapshot = self._snapshot(session)
                session.snapshots.append(snapshot)
                if not session.done:
                    begin_round(session.state, self.pool, self.backends)
            except BackendError as exc:
                raise ApiError(502, "backend_error", str(exc)) from exc
            session.updated_at = _now()
            return {
                "session_id": session.id,
                "done": session.done,
                "question": session.state.pending_question,
                "round": snapshot,
            }
        finally:
            session.lock.release()

    def view(self, session_id: str) -> dict:
        session = self._get(session_id)
        return {
            "session_id": session.id,
            "created_at": session.created_at,
            "updated_at": session.updated_at,
            "done": session.done,
            "question": session.state.pending_question,
            "rounds": list(session.snapshots),
        }

    def end(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            session.ended = True
            log = session.state.to_log(session.query_id)
            path = self._persist(session, log)
        with self._registry_lock:
            self._sessions.pop(session_id, None)
        return {
            "session_id": session_id,
            "log": log.to_dict(),
            "log_path": str(path) if path else None,
        }

    def flush(self) -> None:
        """Persist logs of all open sessions (graceful shutdown)."""
        with self._registry_lock:
            sessions = list(self._sessions.values())
        for session in sessions:
            with session.lock:
                if not session.ended:
                    session.ended = True
                    self._persist(session, session.state.to_log(session.query_id))

    # -- internals ----------------------------------------------------------

    def _get(self, session_id: str) -> SessionRuntime:
        with self._registry_lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return session

    def _snapshot(self, session: SessionRuntime) -> dict:
        state = session.state
        top = top_n_candidates(state.query_embedding, self.pool, session.k)
        record = state.rounds[-1]
        return {
            "round": record.round,
            "question": record.question,
            "answer": record.answer,
            "reformulated_query": record.reformulated_query,
            "rank": record.rank,
            "results": [
                {
                    "id": member.id,
                    "caption": member.caption,
                    "image_uri": member.image_uri,
                    "score": score,
                }
                for member, score in zip(top.members, top.scores)
            ],
        }

    def _persist(self, session: SessionRuntime, log: EpisodeLog) -> Path | None:
        if self.log_dir is None:
            return None
        self.log_dir.mkdir(parents=True, exist_ok=True)
        path = self.log_dir / f"{session.id}.jsonl"
        write_logs([log], path)
        return path


def create_app(pool: ImagePool, backends: Backends, config: EpisodeConfig,
               log_dir: str | Path | None = None, static_dir: str | Path | None = None,
               id_factory=None) -> FastAPI:
    service = SessionService(pool, backends, config, log_dir=log_dir,
                             id_factory=id_factory)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        service.flush()

    app = FastAPI(title="chatsearch session service", lifespan=lifespan)
    app.state.service = service

    @app.exception_handler(ApiError)
    async def on_api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"code": "validation_error", "message": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "pool_size": len(service.pool)}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionRequest):
        return service.create(body.caption, body.k, body.target_id)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return service.view(session_id)

    @app.post("/sessions/{session_id}/answer")
    def submit_answer(session_id: str, body: AnswerRequest):
        return service.answer(session_id, body.text)

    @app.post("/sessions/{session_id}/end")
    def end_session(session_id: str):
        return service.end(session_id)

    if static_dir is not None:
        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
