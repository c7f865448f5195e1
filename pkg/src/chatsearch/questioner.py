"""Dialogue-side pipeline: reformulate, ground, ask, filter.

A round of questioning works on four stages, all pure given their
backends:

1. ``reformulate`` rewrites the dialogue into a caption-style query so
   zero-shot retrievers see text shaped like their training captions.
2. ``extract_retrieval_context`` grounds the questioner: cluster the
   top-n candidates, pick the lowest-entropy member of each cluster
   (the one with the most concrete, distinguishable attributes), and
   caption those representatives.
3. ``generate_questions`` samples k candidate questions from the chat
   model using a few-shot prompt that embeds the representative captions.
4. ``filter_questions`` drops questions the model can already answer
   from the dialogue, then picks the survivor whose appended query
   disturbs the candidate similarity distribution least (KL argmin).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import prompts
from .backends.base import (
    BackendError,
    CaptionBackend,
    ChatBackend,
    ChatRequest,
    EmbedBackend,
)
from .config import sampling_for
from .corpus import CandidateSet, ImagePool, top_n_candidates
from .numerics import (
    entropy,
    kl_divergence,
    kmeans,
    l2_normalize,
    softmax_distribution,
)


@dataclass(frozen=True)
class DialogueContext:
    """The raw query state: initial caption plus accumulated QA pairs."""

    caption: str
    qa_pairs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.caption or not self.caption.strip():
            raise ValueError("dialogue context needs a non-empty caption")
        object.__setattr__(self, "qa_pairs", tuple(tuple(p) for p in self.qa_pairs))

    @property
    def round(self) -> int:
        return len(self.qa_pairs)

    def with_answer(self, question: str, answer: str) -> "DialogueContext":
        return DialogueContext(self.caption, self.qa_pairs + ((question, answer),))


@dataclass(frozen=True)
class ReformulatedQuery:
    text: str
    source_round: int

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("reformulated query must be non-empty")


@dataclass(frozen=True)
class RetrievalContext:
    """Representative captions injected into the questioner prompt."""

    captions: tuple[str, ...]
    representative_ids: tuple[str, ...]

    def __post_init__(self):
        if len(self.captions) != len(self.representative_ids):
            raise ValueError("captions and representative_ids must be parallel")
        if any(not c for c in self.captions):
            raise ValueError("representative captions must be non-empty")

    def __len__(self) -> int:
        return len(self.captions)


@dataclass(frozen=True)
class QuestionSet:
    """Generated questions plus the filtering outcome.

    ``kept`` holds indices that survived the answerability filter (all
    indices when the filter kept nothing and selection fell back to the
    full set); ``chosen`` is the KL-selected index and always points
    into ``kept``.
    """

    questions: tuple[str, ...]
    kept: tuple[int, ...] = ()
    chosen: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "kept", tuple(self.kept))
        for idx in self.kept:
            if not 0 <= idx < len(self.questions):
                raise ValueError(f"kept index {idx} out of range")
        if self.chosen is not None and self.chosen not in self.kept:
            raise ValueError("chosen question must be one of the kept indices")

    @property
    def chosen_question(self) -> str:
        if self.chosen is None:
            raise ValueError("no question has been chosen yet")
        return self.questions[self.chosen]


def reformulation_prompt(context: DialogueContext, template_dir=None) -> str:
    return prompts.render(
        "reformulate", template_dir,
        caption=context.caption,
        dialogue=prompts.format_dialogue(context.qa_pairs),
    )


def question_prompt(context: DialogueContext, retrieval_context: RetrievalContext,
                    template_dir=None) -> str:
    return prompts.render(
        "questions_cot", template_dir,
        candidate_captions=prompts.format_candidate_captions(retrieval_context.captions),
        caption=context.caption,
        dialogue=prompts.format_dialogue(context.qa_pairs),
    )


def filter_prompt(context: DialogueContext, question: str, template_dir=None) -> str:
    return prompts.render(
        "filter", template_dir,
        caption=context.caption,
        dialogue=prompts.format_dialogue(context.qa_pairs),
        question=question,
    )


def reformulate(context: DialogueContext, chat: ChatBackend,
                template_dir=None) -> ReformulatedQuery:
    """Caption-style rewrite of the dialogue; identity at round 0."""
    if context.round == 0:
        return ReformulatedQuery(text=context.caption, source_round=0)
    params = sampling_for("reformulation")
    reply = chat.chat(ChatRequest.user(
        reformulation_prompt(context, template_dir),
        temperature=params.temperature,
        max_output_tokens=params.max_output_tokens,
    ))
    text = reply.strip()
    if not text:
        raise BackendError("reformulation produced empty output")
    return ReformulatedQuery(text=text, source_round=context.round)


def candidate_similarities(query_embedding, candidates: CandidateSet) -> np.ndarray:
    """Cosine similarity of a vector against every candidate member."""
    unit_members = _unit_rows(candidates.embedding_matrix())
    return unit_members @ l2_normalize(np.asarray(query_embedding, dtype=np.float64))


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / norms


def member_entropies(candidates: CandidateSet, temperature: float = 1.0) -> np.ndarray:
    """Entropy of each member's similarity distribution over the whole set.

    The distribution includes the member's self-similarity term, per the
    literal candidate-set formula.
    """
    unit = _unit_rows(candidates.embedding_matrix())
    sims = unit @ unit.T
    out = np.empty(len(candidates))
    for i in range(len(candidates)):
        out[i] = entropy(softmax_distribution(sims[i], temperature=temperature))
    return out


def extract_retrieval_context(
    context_embedding,
    pool: ImagePool,
    n: int,
    m: int,
    captioner: CaptionBackend,
    seed: int = 0,
    temperature: float = 1.0,
) -> tuple[CandidateSet, RetrievalContext]:
    """Ground the questioner: top-n candidates, m clusters, one caption each.

    Clusters the candidate embeddings (unit-normalized, matching the
    cosine retrieval geometry), then inside each cluster selects the
    member whose similarity distribution over the full candidate set has
    minimal entropy; ties break toward the lower candidate index.
    Cluster output order is ascending cluster id.
    """
    candidates = top_n_candidates(context_embedding, pool, n)
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > len(candidates):
        raise ValueError(f"m={m} exceeds the candidate count ({len(candidates)})")
    labels = kmeans(_unit_rows(candidates.embedding_matrix()), m=m, seed=seed)
    entropies = member_entropies(candidates, temperature=temperature)
    captions: list[str] = []
    representative_ids: list[str] = []
    for cluster in range(m):
        members = np.flatnonzero(labels == cluster)
        representative = int(members[int(np.argmin(entropies[members]))])
        image_id = candidates.members[representative].id
        captions.append(captioner.caption_image(image_id))
        representative_ids.append(image_id)
    return candidates, RetrievalContext(
        captions=tuple(captions), representative_ids=tuple(representative_ids))


def normalize_question(raw: str) -> str | None:
    """First line of the reply, stripped of a 'Question:' prefix, ending '?'."""
    for line in raw.splitlines():
        text = line.strip()
        if not text:
            continue
        if text.lower().startswith("question:"):
            text = text[len("question:"):].strip()
        if not text:
            continue
        if not text.endswith("?"):
            text += "?"
        return text
    return None


def generate_questions(
    context: DialogueContext,
    retrieval_context: RetrievalContext,
    k: int,
    chat: ChatBackend,
    seed: int = 0,
    template_dir=None,
) -> QuestionSet:
    """Sample k candidate questions grounded in the representative captions."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(retrieval_context) == 0:
        raise ValueError("retrieval context must be non-empty")
    prompt = question_prompt(context, retrieval_context, template_dir)
    params = sampling_for("question_generation")
    questions: list[str] = []
    for i in range(k):
        reply = chat.chat(ChatRequest.user(
            prompt,
            temperature=params.temperature,
            max_output_tokens=params.max_output_tokens,
            seed=seed + i,
        ))
        question = normalize_question(reply)
        if question is not None:
            questions.append(question)
    if not questions:
        raise BackendError(f"no parseable question after {k} attempts")
    return QuestionSet(questions=tuple(questions))


def filter_questions(
    context: DialogueContext,
    query_text: str,
    query_embedding,
    questions: QuestionSet,
    candidates: CandidateSet,
    chat: ChatBackend,
    embedder: EmbedBackend,
    temperature: float = 1.0,
    template_dir=None,
) -> QuestionSet:
    """Two-stage selection of the question to actually ask.

    Stage 1 keeps a question iff the chat model replies "uncertain"
    (case-insensitive substring) when asked to answer it from the
    dialogue alone — anything it can already answer is redundant. Stage
    2 embeds ``query_text + " " + question`` for each kept question and
    returns the KL argmin between the current candidate distribution and
    the appended one; ties break toward the lower index. When stage 1
    keeps nothing, stage 2 runs over all generated questions instead of
    stalling the round.
    """
    if not questions.questions:
        raise ValueError("no questions to filter")
    params = sampling_for("filtering")
    kept: list[int] = []
    for idx, question in enumerate(questions.questions):
        reply = chat.chat(ChatRequest.user(
            filter_prompt(context, question, template_dir),
            temperature=params.temperature,
            max_output_tokens=params.max_output_tokens,
        ))
        if "uncertain" in reply.lower():
            kept.append(idx)
    if not kept:
        kept = list(range(len(questions.questions)))

    ids = candidates.ids
    base = softmax_distribution(
        candidate_similarities(query_embedding, candidates),
        temperature=temperature, candidate_ids=ids)
    chosen: int | None = None
    best = float("inf")
    for idx in kept:
        appended = f"{query_text} {questions.questions[idx]}"
        sims = candidate_similarities(embedder.embed_text(appended), candidates)
        shifted = softmax_distribution(sims, temperature=temperature, candidate_ids=ids)
        divergence = kl_divergence(base, shifted)
        if divergence < best:
            best = divergence
            chosen = idx
    assert chosen is not None
    return QuestionSet(questions=questions.questions, kept=tuple(kept), chosen=chosen)
