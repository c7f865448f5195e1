"""HTTP clients for remote model endpoints.

The chat client speaks the de-facto chat-completions JSON shape
(messages in, choices out). Embedder, captioner, and answerer are plain
JSON POSTs ({"text"}, {"image_uri"}, {"question", "image_uri"}) to
configurable endpoints. All clients share one retry policy: connection
failures, timeouts, 429 and 5xx are retried with exponential backoff up
to the configured count; other statuses fail immediately. Error
messages carry status and attempt count, never headers or tokens.
"""

from __future__ import annotations

import time
from typing import Callable

import httpx
import numpy as np

from ..numerics import as_embedding, l2_normalize
from .base import (
    AnswerBackend,
    BackendConfig,
    CaptionBackend,
    ChatBackend,
    ChatRequest,
    EmbedBackend,
    TransportError,
    UnknownImageError,
)

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class _JsonEndpoint:
    """POST-with-retries against one endpoint."""

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None,
                 sleep=time.sleep):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep

    def post(self, payload: dict) -> dict:
        headers = {}
        if self.config.token:
            headers["Authorization"] = f"Bearer {self.config.token}"
        attempts = self.config.retries + 1
        for attempt in range(1, attempts + 1):
            try:
                response = self._client.post(self.config.endpoint, json=payload,
                                             headers=headers)
            except httpx.HTTPError as exc:
                if attempt < attempts:
                    self._backoff(attempt)
                    continue
                raise TransportError(
                    f"request failed after {attempt} attempt(s): {type(exc).__name__}",
                    status=None, attempts=attempt) from exc
            if 200 <= response.status_code < 300:
                try:
                    body = response.json()
                except ValueError:
                    raise TransportError("reply is not valid JSON",
                                         status=response.status_code,
                                         attempts=attempt) from None
                if not isinstance(body, dict):
                    raise TransportError("reply is not a JSON object",
                                         status=response.status_code, attempts=attempt)
                return body
            if response.status_code in RETRYABLE_STATUSES and attempt < attempts:
                self._backoff(attempt)
                continue
            raise TransportError(
                f"endpoint returned status {response.status_code} "
                f"after {attempt} attempt(s)",
                status=response.status_code, attempts=attempt)
        raise AssertionError("unreachable")

    def _backoff(self, attempt: int) -> None:
        delay = self.config.backoff * (2 ** (attempt - 1))
        if delay > 0:
            self._sleep(delay)


def _field(body: dict, path: list, attempts: int = 1):
    node = body
    for key in path:
        try:
            node = node[key]
        except (KeyError, IndexError, TypeError):
            dotted = ".".join(str(p) for p in path)
            raise TransportError(f"malformed reply: missing {dotted!r}",
                                 attempts=attempts) from None
    return node


class RemoteChatBackend(ChatBackend):
    def __init__(self, config: BackendConfig, client: httpx.Client | None = None,
                 sleep=time.sleep):
        self._endpoint = _JsonEndpoint(config, client, sleep)
        self._model = config.model

    def chat(self, request: ChatRequest) -> str:
        payload = {
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        if self._model:
            payload["model"] = self._model
        if request.seed is not None:
            payload["seed"] = request.seed
        body = self._endpoint.post(payload)
        content = _field(body, ["choices", 0, "message", "content"])
        if not isinstance(content, str):
            raise TransportError("malformed reply: content is not a string")
        return content


class RemoteEmbedBackend(EmbedBackend):
    def __init__(self, config: BackendConfig, dimension: int | None = None,
                 client: httpx.Client | None = None, sleep=time.sleep):
        self._endpoint = _JsonEndpoint(config, client, sleep)
        self.dimension = dimension

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        body = self._endpoint.post({"text": text})
        values = _field(body, ["embedding"])
        try:
            vec = as_embedding(values, dim=self.dimension)
            return l2_normalize(vec)
        except ValueError as exc:
            raise TransportError(f"malformed embedding reply: {exc}") from None


class _UriBacked:
    def __init__(self, uri_resolver: Callable[[str], str | None]):
        self._resolve = uri_resolver

    def _uri_for(self, image_id: str) -> str:
        try:
            uri = self._resolve(image_id)
        except KeyError:
            uri = None
        if not uri:
            raise UnknownImageError(f"no image_uri known for id {image_id!r}")
        return uri


class RemoteCaptionBackend(CaptionBackend, _UriBacked):
    def __init__(self, config: BackendConfig, uri_resolver,
                 client: httpx.Client | None = None, sleep=time.sleep):
        _UriBacked.__init__(self, uri_resolver)
        self._endpoint = _JsonEndpoint(config, client, sleep)

    def caption_image(self, image_id: str) -> str:
        body = self._endpoint.post({"image_uri": self._uri_for(image_id)})
        caption = _field(body, ["caption"])
        if not isinstance(caption, str) or not caption.strip():
            raise TransportError("malformed reply: empty caption")
        return caption.strip()


class RemoteAnswerBackend(AnswerBackend, _UriBacked):
    def __init__(self, config: BackendConfig, uri_resolver,
                 client: httpx.Client | None = None, sleep=time.sleep):
        _UriBacked.__init__(self, uri_resolver)
        self._endpoint = _JsonEndpoint(config, client, sleep)

    def answer_question(self, question: str, target_image_id: str) -> str:
        body = self._endpoint.post({
            "question": question,
            "image_uri": self._uri_for(target_image_id),
        })
        answer = _field(body, ["answer"])
        if not isinstance(answer, str) or not answer.strip():
            raise TransportError("malformed reply: empty answer")
        return answer.strip()


def pool_uri_resolver(pool) -> Callable[[str], str | None]:
    """Resolve image ids to display URIs via the pool records."""
    return lambda image_id: pool.get(image_id).image_uri
