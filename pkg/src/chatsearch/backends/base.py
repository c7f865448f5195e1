"""Interfaces for the four model roles the pipeline talks to.

Every stage that needs a model goes through one of these: a chat LLM
(reformulation, question generation, answerability filtering), a text
embedder, an image captioner, and an answerer standing in for the user.
Concrete implementations live in ``mock`` (offline, deterministic) and
``remote`` (HTTP clients).
"""

from __future__ import annotations

import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

VALID_ROLES = ("system", "user", "assistant")


class BackendError(Exception):
    """Base class for anything a backend can fail with."""


class TransportError(BackendError):
    """A remote call failed after the retry policy was exhausted."""

    def __init__(self, message: str, status: int | None = None, attempts: int = 1):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class UnknownImageError(BackendError):
    """An image id could not be resolved by a backend."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in VALID_ROLES:
            raise ValueError(f"invalid role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call: messages plus sampling parameters."""

    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_output_tokens: int = 256
    seed: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("chat request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")

    @classmethod
    def user(cls, prompt: str, temperature: float = 0.0,
             max_output_tokens: int = 256, seed: int | None = None) -> "ChatRequest":
        return cls(messages=(ChatMessage("user", prompt),),
                   temperature=temperature,
                   max_output_tokens=max_output_tokens,
                   seed=seed)

    @property
    def prompt(self) -> str:
        """Concatenated message contents; what the mocks key off."""
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class BackendConfig:
    """Transport settings for one remote backend role.

    The auth token is excluded from repr so configs can be logged
    without leaking secrets.
    """

    endpoint: str
    token: str | None = field(default=None, repr=False)
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5
    model: str | None = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")

    @classmethod
    def from_env(cls, role: str, env=None) -> "BackendConfig":
        """Read CHATSEARCH_<ROLE>_{ENDPOINT,TOKEN,TIMEOUT,RETRIES,BACKOFF,MODEL}."""
        env = os.environ if env is None else env
        prefix = f"CHATSEARCH_{role.upper()}_"
        endpoint = env.get(prefix + "ENDPOINT")
        if not endpoint:
            raise ValueError(f"missing {prefix}ENDPOINT for remote backend {role!r}")
        return cls(
            endpoint=endpoint,
            token=env.get(prefix + "TOKEN"),
            timeout=float(env.get(prefix + "TIMEOUT", 30.0)),
            retries=int(env.get(prefix + "RETRIES", 2)),
            backoff=float(env.get(prefix + "BACKOFF", 0.5)),
            model=env.get(prefix + "MODEL"),
        )


class ChatBackend(ABC):
    @abstractmethod
    def chat(self, request: ChatRequest) -> str:
        """Return the model's text reply for the request."""


class EmbedBackend(ABC):
    @abstractmethod
    def embed_text(self, text: str) -> np.ndarray:
        """Return a fixed-dimension, L2-normalized embedding of the text."""


class CaptionBackend(ABC):
    @abstractmethod
    def caption_image(self, image_id: str) -> str:
        """Return a non-empty caption for the image."""


class AnswerBackend(ABC):
    @abstractmethod
    def answer_question(self, question: str, target_image_id: str) -> str:
        """Answer a question about the target image."""


@dataclass
class Backends:
    """The full set of model handles one pipeline run consumes."""

    chat: ChatBackend
    embed: EmbedBackend
    caption: CaptionBackend
    answer: AnswerBackend | None = None
