"""Chat/embedding access with retries and record/replay transcripts."""

from .gateway import DEFAULT_TEMPERATURES, Gateway, UsageTotals
from .messages import (
    ChatExchange,
    ChatResponse,
    ImageAttachment,
    Message,
    TranscriptRecord,
    Usage,
    canonical_hash,
    canonical_json,
)
from .scripted import HashingEmbedder, ScriptedTransport, ScriptRule
from .transports import (
    API_KEY_ENV,
    BASE_URL_ENV,
    AuthenticationError,
    ContextLengthError,
    GatewayError,
    LiveTransport,
    RecordTransport,
    ReplayMissError,
    ReplayTransport,
    RetriesExhaustedError,
    TranscriptStore,
    TransientError,
    transport_mode,
)

__all__ = [
    "API_KEY_ENV",
    "AuthenticationError",
    "BASE_URL_ENV",
    "ChatExchange",
    "ChatResponse",
    "ContextLengthError",
    "DEFAULT_TEMPERATURES",
    "Gateway",
    "GatewayError",
    "HashingEmbedder",
    "ImageAttachment",
    "LiveTransport",
    "Message",
    "RecordTransport",
    "ReplayMissError",
    "ReplayTransport",
    "RetriesExhaustedError",
    "ScriptRule",
    "ScriptedTransport",
    "TranscriptRecord",
    "TranscriptStore",
    "TransientError",
    "Usage",
    "UsageTotals",
    "canonical_hash",
    "canonical_json",
    "transport_mode",
]
