"""Chat exchanges, responses, transcript records and request hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

ROLES = ("system", "user", "assistant", "tool")


@dataclass(frozen=True)
class ImageAttachment:
    path: str
    media_type: str

    def to_dict(self) -> dict[str, str]:
        return {"path": self.path, "media_type": self.media_type}


@dataclass(frozen=True)
class Message:
    role: str
    content: str
    images: tuple[ImageAttachment, ...] = ()

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.images and self.role != "user":
            raise ValueError("only user messages carry image attachments")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.images:
            out["images"] = [img.to_dict() for img in self.images]
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Message:
        images = tuple(ImageAttachment(**img) for img in data.get("images", ()))
        return cls(role=data["role"], content=data["content"], images=images)


@dataclass(frozen=True)
class ChatExchange:
    messages: tuple[Message, ...]
    model: str = "default"
    temperature: float = 0.0
    max_output_tokens: int = 2048

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("an exchange needs at least one message")
        if self.messages[0].role != "system":
            raise ValueError("the first message must be the system message")
        if any(m.role == "system" for m in self.messages[1:]):
            raise ValueError("only the first message may be a system message")
        for prev, cur in zip(self.messages, self.messages[1:]):
            if prev.role == cur.role == "assistant":
                raise ValueError("two consecutive assistant messages")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")

    def with_message(self, message: Message) -> ChatExchange:
        return ChatExchange(
            messages=(*self.messages, message),
            model=self.model,
            temperature=self.temperature,
            max_output_tokens=self.max_output_tokens,
        )

    def canonical(self) -> dict[str, Any]:
        return {
            "messages": [m.to_dict() for m in self.messages],
            "model": self.model,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        }

    @property
    def request_hash(self) -> str:
        return canonical_hash(self.canonical())

    @property
    def prompt_text(self) -> str:
        """The last user or tool message, used in error messages and scripts."""
        for m in reversed(self.messages):
            if m.role in ("user", "tool"):
                return m.content
        return self.messages[-1].content

    @property
    def system_text(self) -> str:
        return self.messages[0].content


def canonical_json(obj: Any) -> str:
    # key order never changes the bytes; string contents (whitespace included) are kept verbatim
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def embed_request(texts: list[str], model: str) -> dict[str, Any]:
    return {"embed": list(texts), "model": model}


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: float = 0.0
    cost: float = 0.0


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: Usage = field(default_factory=Usage)
    request_hash: str = ""


@dataclass(frozen=True)
class TranscriptRecord:
    """One recorded provider answer, keyed by the request hash."""

    request_hash: str
    kind: str  # "chat" or "embed"
    response: Any  # text for chat, list of vectors for embed
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: float = 0.0
    cost: float = 0.0
    prompt_preview: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "request_hash": self.request_hash,
            "kind": self.kind,
            "response": self.response,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "latency_ms": self.latency_ms,
            "cost": self.cost,
            "prompt_preview": self.prompt_preview,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TranscriptRecord:
        return cls(**{k: data[k] for k in (
            "request_hash", "kind", "response", "prompt_tokens", "completion_tokens",
            "latency_ms", "cost", "prompt_preview",
        ) if k in data})
