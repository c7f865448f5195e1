"""Deterministic offline backends.

These let the whole pipeline run without any model: embeddings are
seeded hash-derived unit vectors, captions come from the pool records,
answers from a scripted pattern table or the target's caption, and the
chat mock either replays a script or derives its reply from the
structured sections of the shipped prompt templates. Identical inputs
always produce identical outputs, byte for byte.
"""

from __future__ import annotations

import fnmatch
import hashlib
import re
import threading

import numpy as np

from ..numerics import l2_normalize
from ..prompts import EMPTY_DIALOGUE
from .base import (
    AnswerBackend,
    BackendError,
    CaptionBackend,
    ChatBackend,
    ChatRequest,
    EmbedBackend,
    UnknownImageError,
)

# Words ignored when probing captions and questions for content tokens.
STOPWORDS = frozenset("""
a an and are at be been behind beside between by can could do does down
for from front has have how in into is it its many more most near next no
not of off on onto or out over some that the there this to under up was
were what when where which who with you your
image photo picture scene
""".split())

DEFAULT_ANSWER = "I don't know"
FALLBACK_QUESTION = "can you describe the image in more detail?"


def _tokens(text: str) -> list[str]:
    return [t for t in re.findall(r"[a-z]+", text.lower()) if t not in STOPWORDS]


class ScriptedChatBackend(ChatBackend):
    """Replays canned replies keyed by the exact prompt (or its sha256).

    Useful for pinning a single pipeline stage in tests. Records every
    request in ``transcript``.
    """

    def __init__(self, replies: dict[str, str] | None = None, default=None):
        self._replies = dict(replies or {})
        self._default = default
        self.transcript: list[ChatRequest] = []

    def add(self, prompt: str, reply: str) -> None:
        self._replies[prompt] = reply

    def chat(self, request: ChatRequest) -> str:
        self.transcript.append(request)
        prompt = request.prompt
        if prompt in self._replies:
            return self._replies[prompt]
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        if digest in self._replies:
            return self._replies[digest]
        if self._default is not None:
            return self._default(request) if callable(self._default) else self._default
        raise BackendError(f"no scripted reply for prompt (sha256 {digest[:12]})")


class SimulatedChatBackend(ChatBackend):
    """Template-derived chat mock covering all three pipeline roles.

    Dispatches on the cue lines of the shipped templates:

    - reformulation: returns the caption and all dialogue answers joined
      with "; " (so caption "a dog" + answer "brown" gives "a dog; brown");
    - question generation: asks about the first candidate-caption token
      not already present in the dialogue, offset by the request seed;
    - filtering: replies "uncertain" unless every content token of the
      question already appears in the caption or dialogue.
    """

    def __init__(self):
        self.transcript: list[ChatRequest] = []

    def chat(self, request: ChatRequest) -> str:
        self.transcript.append(request)
        prompt = request.prompt
        if "Reformulated caption:" in prompt:
            return self._reformulate(prompt)
        if 'reply with the single word "uncertain"' in prompt:
            return self._filter(prompt)
        if prompt.rstrip().endswith("Question:"):
            return self._question(prompt, request.seed or 0)
        raise BackendError("simulated chat cannot recognize this prompt shape")

    @staticmethod
    def _caption_line(text: str) -> str:
        match = re.search(r"^Caption: (.*)$", text, flags=re.MULTILINE)
        if match is None:
            raise BackendError("prompt has no 'Caption:' line")
        return match.group(1)

    def _reformulate(self, prompt: str) -> str:
        caption = self._caption_line(prompt)
        answers = re.findall(r"^A: (.*)$", prompt, flags=re.MULTILINE)
        return "; ".join([caption] + answers)

    def _question(self, prompt: str, seed: int) -> str:
        task = prompt.rsplit("Now the real task.", maxsplit=1)[-1]
        body = task.split("Caption:", maxsplit=1)
        numbered = re.findall(r"^\d+\. (.*)$", body[0], flags=re.MULTILINE)
        known = set(_tokens(body[1] if len(body) > 1 else ""))
        novel: list[str] = []
        for caption in numbered:
            for token in _tokens(caption):
                if token not in known and token not in novel:
                    novel.append(token)
        if not novel:
            return FALLBACK_QUESTION
        return f"is there a {novel[seed % len(novel)]} in the image?"

    def _filter(self, prompt: str) -> str:
        match = re.search(r"^Question: (.*)$", prompt, flags=re.MULTILINE)
        if match is None:
            raise BackendError("prompt has no 'Question:' line")
        question_tokens = _tokens(match.group(1))
        context = prompt[: match.start()]
        context = context.replace(EMPTY_DIALOGUE, "")
        context_tokens = set(_tokens(self._caption_line(context)))
        for line in re.findall(r"^[QA]: (.*)$", context, flags=re.MULTILINE):
            context_tokens.update(_tokens(line))
        if question_tokens and all(t in context_tokens for t in question_tokens):
            return "yes, that follows from the dialogue"
        return "uncertain"


class HashEmbedBackend(EmbedBackend):
    """Seeded hash-to-unit-vector embedder.

    Each distinct string maps to a reproducible pseudo-random point on
    the unit sphere; no semantics, stable geometry. Thread-safe cache.
    """

    def __init__(self, dim: int = 32, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise BackendError("cannot embed empty text")
        with self._lock:
            cached = self._cache.get(text)
            if cached is not None:
                return cached
        digest = hashlib.sha256(f"{self.seed}\x1f{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        vec = l2_normalize(rng.normal(size=self.dim))
        with self._lock:
            self._cache[text] = vec
        return vec


class ScriptedEmbedBackend(EmbedBackend):
    """Exact text-to-vector mapping, for hand-traced fixtures."""

    def __init__(self, mapping: dict[str, object], fallback: EmbedBackend | None = None):
        self._mapping = {
            text: l2_normalize(np.asarray(vec, dtype=np.float64))
            for text, vec in mapping.items()
        }
        self._fallback = fallback

    def embed_text(self, text: str) -> np.ndarray:
        if text in self._mapping:
            return self._mapping[text]
        if self._fallback is not None:
            return self._fallback.embed_text(text)
        raise BackendError(f"no scripted embedding for {text!r}")


class PoolCaptionBackend(CaptionBackend):
    """Serves the captions stored on the pool records."""

    def __init__(self, pool):
        self._pool = pool

    def caption_image(self, image_id: str) -> str:
        try:
            record = self._pool.get(image_id)
        except KeyError:
            raise UnknownImageError(f"unknown image id {image_id!r}") from None
        if not record.caption:
            raise BackendError(f"record {image_id!r} has no caption")
        return record.caption


class ScriptedAnswerBackend(AnswerBackend):
    """Answers from a (target id, question glob) table, in table order."""

    def __init__(self, table: dict[tuple[str, str], str] | None = None,
                 default: str = DEFAULT_ANSWER):
        self._table = dict(table or {})
        self._default = default

    def answer_question(self, question: str, target_image_id: str) -> str:
        for (target, pattern), answer in self._table.items():
            if target == target_image_id and fnmatch.fnmatch(question.lower(), pattern.lower()):
                return answer
        return self._default


class CaptionAnswerBackend(AnswerBackend):
    """Answers yes/no by checking question tokens against the target caption.

    Stands in for the user who can see the target: "yes" when every
    content token of the question appears in the target's caption, "no"
    when none do, the configured default otherwise.
    """

    def __init__(self, pool, default: str = DEFAULT_ANSWER):
        self._pool = pool
        self._default = default

    def answer_question(self, question: str, target_image_id: str) -> str:
        try:
            record = self._pool.get(target_image_id)
        except KeyError:
            raise UnknownImageError(f"unknown image id {target_image_id!r}") from None
        question_tokens = _tokens(question)
        if not question_tokens or not record.caption:
            return self._default
        caption_tokens = set(_tokens(record.caption))
        hits = [t for t in question_tokens if t in caption_tokens]
        if len(hits) == len(question_tokens):
            return "yes"
        if not hits:
            return "no"
        return self._default
