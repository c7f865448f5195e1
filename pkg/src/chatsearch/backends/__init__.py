from .base import (
    AnswerBackend,
    BackendConfig,
    BackendError,
    Backends,
    CaptionBackend,
    ChatBackend,
    ChatMessage,
    ChatRequest,
    EmbedBackend,
    TransportError,
    UnknownImageError,
)
from .mock import (
    CaptionAnswerBackend,
    HashEmbedBackend,
    PoolCaptionBackend,
    ScriptedAnswerBackend,
    ScriptedChatBackend,
    ScriptedEmbedBackend,
    SimulatedChatBackend,
)
from .remote import (
    RemoteAnswerBackend,
    RemoteCaptionBackend,
    RemoteChatBackend,
    RemoteEmbedBackend,
    pool_uri_resolver,
)

__all__ = [
    "AnswerBackend",
    "BackendConfig",
    "BackendError",
    "Backends",
    "CaptionAnswerBackend",
    "CaptionBackend",
    "ChatBackend",
    "ChatMessage",
    "ChatRequest",
    "EmbedBackend",
    "HashEmbedBackend",
    "PoolCaptionBackend",
    "RemoteAnswerBackend",
    "RemoteCaptionBackend",
    "RemoteChatBackend",
    "RemoteEmbedBackend",
    "ScriptedAnswerBackend",
    "ScriptedChatBackend",
    "ScriptedEmbedBackend",
    "SimulatedChatBackend",
    "TransportError",
    "UnknownImageError",
    "pool_uri_resolver",
]
