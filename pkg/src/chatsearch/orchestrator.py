"""Episode state machine and batch runner.

An episode is one target's multi-round search. Round 0 embeds the
caption and ranks the pool. Every later round: ground the questioner in
the current candidates, generate and filter questions, obtain an
answer, fold it into the dialogue, reformulate, re-embed, re-rank.

``begin_round`` and ``complete_round`` split a round at the answer so a
human (via the session service) can take the answerer's place; the
state suspends in ``AWAITING_ANSWER`` in between. ``run_round`` glues
them together with an answer backend for simulation.

Everything is deterministic for a fixed config seed: per-episode seeds
derive from (seed, query_id), so batch results do not depend on the
parallelism level or completion order.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .backends.base import BackendError, Backends
from .config import (
    DEFAULT_CLUSTERS,
    DEFAULT_MAX_ROUNDS,
    DEFAULT_QUESTIONS_PER_ROUND,
    DEFAULT_REPORT_K,
    DEFAULT_SOFTMAX_TEMPERATURE,
)
from .corpus import CandidateSet, ImagePool, default_candidate_count, rank_of_target
from .metrics import EpisodeLog, RoundRecord
from .numerics import derive_seed
from .questioner import (
    DialogueContext,
    ReformulatedQuery,
    RetrievalContext,
    extract_retrieval_context,
    filter_questions,
    generate_questions,
    reformulate,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeConfig:
    """Tunable parameters of one episode (and of a whole batch run)."""

    max_rounds: int = DEFAULT_MAX_ROUNDS
    n: int | None = None  # None: about 1% of the pool
    m: int = DEFAULT_CLUSTERS
    k_questions: int = DEFAULT_QUESTIONS_PER_ROUND
    report_k: int = DEFAULT_REPORT_K
    seed: int = 0
    softmax_temperature: float = DEFAULT_SOFTMAX_TEMPERATURE
    early_stop: bool = False
    template_dir: str | None = None

    def __post_init__(self):
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.n is not None and self.n < 1:
            raise ValueError("n must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.k_questions < 1:
            raise ValueError("k_questions must be >= 1")
        if self.softmax_temperature <= 0:
            raise ValueError("softmax_temperature must be positive")

    def resolve_for_pool(self, pool_size: int) -> "EpisodeConfig":
        """Pin n to the pool and clamp m to n."""
        n = self.n if self.n is not None else default_candidate_count(pool_size)
        n = min(max(n, 1), pool_size)
        m = self.m
        if m > n:
            logger.warning("clamping m=%d to candidate count n=%d", m, n)
            m = n
        return replace(self, n=n, m=m)


class EpisodeStatus(enum.Enum):
    IN_PROGRESS = "in_progress"
    AWAITING_ANSWER = "awaiting_answer"
    COMPLETED = "completed"
    FAILED = "failed"

    @property
    def terminal(self) -> bool:
        return self in (EpisodeStatus.COMPLETED, EpisodeStatus.FAILED)


@dataclass
class EpisodeState:
    """Mutable per-episode state; owned by exactly one episode runner."""

    config: EpisodeConfig
    dialogue: DialogueContext
    query: ReformulatedQuery
    query_embedding: np.ndarray
    status: EpisodeStatus
    target_id: str | None = None
    episode_seed: int = 0
    pending_question: str | None = None
    last_candidates: CandidateSet | None = None
    last_retrieval_context: RetrievalContext | None = None
    rounds: list[RoundRecord] = field(default_factory=list)
    failure: str | None = None

    @property
    def rank_history(self) -> list[int | None]:
        return [record.rank for record in self.rounds]

    @property
    def completed_rounds(self) -> int:
        return self.dialogue.round

    def to_log(self, query_id: str) -> EpisodeLog:
        return EpisodeLog(query_id=query_id, rounds=tuple(self.rounds))


def start_episode(caption: str, pool: ImagePool, config: EpisodeConfig,
                  backends: Backends, target_id: str | None = None,
                  episode_seed: int | None = None) -> EpisodeState:
    """Run round 0: embed the caption and rank the pool against it."""
    if len(pool) == 0:
        raise ValueError("pool must be non-empty")
    if target_id is not None and target_id not in pool:
        raise KeyError(f"unknown target id {target_id!r}")
    config = config.resolve_for_pool(len(pool))
    dialogue = DialogueContext(caption=caption)
    query = reformulate(dialogue, backends.chat, config.template_dir)
    embedding = backends.embed.embed_text(query.text)
    if embedding.size != pool.dimension:
        raise BackendError(
            f"embedder dimension {embedding.size} != pool dimension {pool.dimension}")
    rank = rank_of_target(embedding, pool, target_id) if target_id else None
    state = EpisodeState(
        config=config,
        dialogue=dialogue,
        query=query,
        query_embedding=embedding,
        status=EpisodeStatus.IN_PROGRESS,
        target_id=target_id,
        episode_seed=config.seed if episode_seed is None else episode_seed,
        rounds=[RoundRecord(round=0, rank=rank, reformulated_query=query.text)],
    )
    _maybe_finish(state)
    return state


def begin_round(state: EpisodeState, pool: ImagePool, backends: Backends) -> str:
    """Ground, generate, and filter; leaves the state awaiting an answer."""
    if state.status is not EpisodeStatus.IN_PROGRESS:
        raise ValueError(f"cannot begin a round in status {state.status.value}")
    config = state.config
    round_no = state.dialogue.round + 1
    candidates, retrieval_context = extract_retrieval_context(
        state.query_embedding, pool, n=config.n, m=config.m,
        captioner=backends.caption,
        seed=derive_seed(state.episode_seed, round_no, "clusters"),
        temperature=config.softmax_temperature,
    )
    questions = generate_questions(
        state.dialogue, retrieval_context, k=config.k_questions,
        chat=backends.chat,
        seed=derive_seed(state.episode_seed, round_no, "questions"),
        template_dir=config.template_dir,
    )
    selected = filter_questions(
        state.dialogue, state.query.text, state.query_embedding,
        questions, candidates, chat=backends.chat, embedder=backends.embed,
        temperature=config.softmax_temperature,
        template_dir=config.template_dir,
    )
    state.last_candidates = candidates
    state.last_retrieval_context = retrieval_context
    state.pending_question = selected.chosen_question
    state.status = EpisodeStatus.AWAITING_ANSWER
    return state.pending_question


def complete_round(state: EpisodeState, pool: ImagePool, backends: Backends,
                   answer: str) -> RoundRecord:
    """Fold the answer in, reformulate, re-embed, re-rank.

    The state mutates only after every backend call has succeeded, so a
    transport failure leaves the round pending and retryable.
    """
    if state.status is not EpisodeStatus.AWAITING_ANSWER:
        raise ValueError(f"no pending question in status {state.status.value}")
    if not answer or not answer.strip():
        raise ValueError("answer must be non-empty")
    question = state.pending_question
    dialogue = state.dialogue.with_answer(question, answer.strip())
    query = reformulate(dialogue, backends.chat, state.config.template_dir)
    embedding = backends.embed.embed_text(query.text)
    rank = (rank_of_target(embedding, pool, state.target_id)
            if state.target_id else None)
    record = RoundRecord(
        round=dialogue.round,
        rank=rank,
        reformulated_query=query.text,
        question=question,
        answer=answer.strip(),
    )
    state.dialogue = dialogue
    state.query = query
    state.query_embedding = embedding
    state.rounds.append(record)
    state.pending_question = None
    state.status = EpisodeStatus.IN_PROGRESS
    _maybe_finish(state)
    return record


def _maybe_finish(state: EpisodeState) -> None:
    if state.status is not EpisodeStatus.IN_PROGRESS:
        return
    last_rank = state.rounds[-1].rank if state.rounds else None
    if state.dialogue.round >= state.config.max_rounds:
        state.status = EpisodeStatus.COMPLETED
    elif state.config.early_stop and last_rank == 1:
        state.status = EpisodeStatus.COMPLETED


def fail_episode(state: EpisodeState, cause: str) -> None:
    state.failure = cause
    state.pending_question = None
    state.status = EpisodeStatus.FAILED


def run_round(state: EpisodeState, pool: ImagePool, backends: Backends) -> RoundRecord:
    """One full simulated round: question, answer backend, completion."""
    if backends.answer is None:
        raise ValueError("run_round needs an answer backend; use begin/complete "
                         "for human-in-the-loop sessions")
    question = begin_round(state, pool, backends)
    answer = backends.answer.answer_question(question, state.target_id)
    return complete_round(state, pool, backends, answer)


def _run_episode_state(target_id: str, caption: str, pool: ImagePool,
                       config: EpisodeConfig, backends: Backends,
                       query_id: str) -> EpisodeState:
    episode_seed = derive_seed(config.seed, query_id)
    state = start_episode(caption, pool, config, backends,
                          target_id=target_id, episode_seed=episode_seed)
    while state.status is EpisodeStatus.IN_PROGRESS:
        try:
            run_round(state, pool, backends)
        except BackendError as exc:
            fail_episode(state, str(exc))
            logger.warning("episode %s failed at round %d: %s",
                           query_id, state.dialogue.round + 1, exc)
    return state


def run_episode(target_id: str, caption: str, pool: ImagePool,
                config: EpisodeConfig, backends: Backends,
                query_id: str | None = None) -> EpisodeLog:
    """Full episode for one target; failures keep the partial history."""
    query_id = query_id if query_id is not None else target_id
    state = _run_episode_state(target_id, caption, pool, config, backends, query_id)
    return state.to_log(query_id)


@dataclass(frozen=True)
class BatchResult:
    """Logs sorted by query id plus per-episode failure causes."""

    logs: tuple[EpisodeLog, ...]
    failures: dict[str, str]

    @property
    def num_failed(self) -> int:
        return len(self.failures)


def run_batch(queries, pool: ImagePool, config: EpisodeConfig,
              backends: Backends, parallelism: int = 1) -> BatchResult:
    """Run one episode per (target_id, caption) pair.

    Output is sorted by query_id and independent of ``parallelism``;
    a failing episode is recorded and the batch continues.
    """
    queries = list(queries)
    ids = [target_id for target_id, _ in queries]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise ValueError(f"duplicate target ids in dataset: {sorted(dupes)}")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    failures: dict[str, str] = {}
    logs: list[EpisodeLog] = []

    def one(pair):
        target_id, caption = pair
        try:
            state = _run_episode_state(target_id, caption, pool, config,
                                       backends, query_id=target_id)
        except (BackendError, KeyError, ValueError) as exc:
            # Round 0 never ran; there is no partial log to keep.
            return None, str(exc)
        return state.to_log(target_id), state.failure

    if parallelism == 1:
        outcomes = [one(pair) for pair in queries]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as executor:
            outcomes = list(executor.map(one, queries))

    for (target_id, _), (log, error) in zip(queries, outcomes):
        if error is not None:
            failures[target_id] = error
        if log is not None:
            logs.append(log)

    logs.sort(key=lambda log: log.query_id)
    return BatchResult(logs=tuple(logs), failures=failures)
