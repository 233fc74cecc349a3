"""Provider transports: live HTTPS, recording, and replay from transcripts."""

from __future__ import annotations

import base64
import json
import os
import threading
import time
from collections import defaultdict
from pathlib import Path
from typing import Any, Protocol, Sequence

import httpx

from .messages import (
    ChatExchange,
    ChatResponse,
    TranscriptRecord,
    Usage,
    canonical_hash,
    embed_request,
)

API_KEY_ENV = "HYPODISCO_API_KEY"
BASE_URL_ENV = "HYPODISCO_BASE_URL"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
TRANSPORT_MODES = ("live", "record", "replay", "scripted")


class GatewayError(RuntimeError):
    """Base class for provider-side failures."""


class AuthenticationError(GatewayError):
    pass


class ContextLengthError(GatewayError):
    """The prompt is too long for the model; callers may truncate and retry."""


class TransientError(GatewayError):
    """Retryable failure: rate limits, timeouts, 5xx responses."""


class RetriesExhaustedError(GatewayError):
    pass


class ReplayMissError(GatewayError):
    def __init__(self, request_hash: str, prompt: str):
        self.request_hash = request_hash
        super().__init__(f"no recorded response for request {request_hash} (prompt: {prompt[:80]!r})")


class Transport(Protocol):
    is_replay: bool

    def chat(self, exchange: ChatExchange) -> ChatResponse: ...

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]: ...


# --------------------------------------------------------------------------- transcript store


class TranscriptStore:
    """Append-only JSONL file of transcript records, indexed by request hash.

    A hash may hold several records when the same request was sent more
    than once; replay serves them in recorded order.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[str, list[TranscriptRecord]] = defaultdict(list)
        if self.path.exists():
            for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    rec = TranscriptRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise GatewayError(f"{self.path}:{lineno}: bad transcript record ({exc})") from None
                self._records[rec.request_hash].append(rec)

    def __len__(self) -> int:
        return sum(len(v) for v in self._records.values())

    def records(self, request_hash: str) -> list[TranscriptRecord]:
        return list(self._records.get(request_hash, ()))

    def append(self, record: TranscriptRecord) -> None:
        with self._lock:
            self._records[record.request_hash].append(record)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------- live


def _wire_message(message) -> dict[str, Any]:
    # the tool role carries executor output; chat-completions reserves "tool"
    # for function-call replies, so it goes over the wire as a user turn
    role = "user" if message.role == "tool" else message.role
    if not message.images:
        return {"role": role, "content": message.content}
    parts: list[dict[str, Any]] = [{"type": "text", "text": message.content}]
    for img in message.images:
        data = base64.b64encode(Path(img.path).read_bytes()).decode("ascii")
        parts.append({"type": "image_url", "image_url": {"url": f"data:{img.media_type};base64,{data}"}})
    return {"role": role, "content": parts}


class LiveTransport:
    """Chat-completions style JSON over HTTPS."""

    is_replay = False

    def __init__(self, api_key: str, base_url: str = DEFAULT_BASE_URL, timeout: float = 120.0,
                 client: httpx.Client | None = None):
        if not api_key:
            raise AuthenticationError(f"missing API key; set {API_KEY_ENV}")
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {api_key}"}

    @classmethod
    def from_env(cls, **kwargs: Any) -> LiveTransport:
        key = os.environ.get(API_KEY_ENV, "")
        if not key:
            raise AuthenticationError(f"environment variable {API_KEY_ENV} is not set")
        return cls(key, os.environ.get(BASE_URL_ENV, DEFAULT_BASE_URL), **kwargs)

    def _post(self, route: str, payload: dict[str, Any]) -> dict[str, Any]:
        try:
            resp = self._client.post(f"{self.base_url}/{route}", json=payload, headers=self._headers)
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            raise TransientError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"provider rejected credentials ({resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"provider returned {resp.status_code}")
        if resp.status_code >= 400:
            body = resp.text
            if "context_length" in body or "maximum context" in body:
                raise ContextLengthError(body[:300])
            raise GatewayError(f"provider returned {resp.status_code}: {body[:300]}")
        return resp.json()

    def chat(self, exchange: ChatExchange) -> ChatResponse:
        payload = {
            "model": exchange.model,
            "messages": [_wire_message(m) for m in exchange.messages],
            "temperature": exchange.temperature,
            "max_tokens": exchange.max_output_tokens,
        }
        started = time.perf_counter()
        data = self._post("chat/completions", payload)
        latency = (time.perf_counter() - started) * 1000.0
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise GatewayError(f"unexpected completion payload: {str(data)[:200]}") from None
        if choice.get("finish_reason") == "length" and not text:
            raise ContextLengthError("completion truncated with no content")
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            usage=Usage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                latency_ms=latency,
            ),
            request_hash=exchange.request_hash,
        )

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]:
        data = self._post("embeddings", {"model": model, "input": list(texts)})
        try:
            items = sorted(data["data"], key=lambda d: d.get("index", 0))
            return [list(map(float, d["embedding"])) for d in items]
        except (KeyError, TypeError):
            raise GatewayError(f"unexpected embedding payload: {str(data)[:200]}") from None


# --------------------------------------------------------------------------- record / replay


class RecordTransport:
    """Forward to ``upstream`` and persist every answer in ``store``."""

    is_replay = False

    def __init__(self, upstream: Transport, store: TranscriptStore):
        self.upstream = upstream
        self.store = store

    def chat(self, exchange: ChatExchange) -> ChatResponse:
        resp = self.upstream.chat(exchange)
        self.store.append(TranscriptRecord(
            request_hash=exchange.request_hash,
            kind="chat",
            response=resp.text,
            prompt_tokens=resp.usage.prompt_tokens,
            completion_tokens=resp.usage.completion_tokens,
            latency_ms=round(resp.usage.latency_ms, 3),
            prompt_preview=exchange.prompt_text[:80],
        ))
        return resp

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]:
        vectors = self.upstream.embed(texts, model)
        self.store.append(TranscriptRecord(
            request_hash=canonical_hash(embed_request(list(texts), model)),
            kind="embed",
            response=vectors,
            prompt_preview=texts[0][:80] if texts else "",
        ))
        return vectors


class ReplayTransport:
    """Answer only from a transcript store; never touches the network."""

    is_replay = True

    def __init__(self, store: TranscriptStore):
        self.store = store
        self._served: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    def _next(self, request_hash: str, preview: str) -> TranscriptRecord:
        records = self.store.records(request_hash)
        if not records:
            raise ReplayMissError(request_hash, preview)
        with self._lock:
            k = self._served[request_hash]
            self._served[request_hash] = k + 1
        return records[min(k, len(records) - 1)]

    def chat(self, exchange: ChatExchange) -> ChatResponse:
        rec = self._next(exchange.request_hash, exchange.prompt_text)
        return ChatResponse(
            text=rec.response,
            usage=Usage(prompt_tokens=rec.prompt_tokens, completion_tokens=rec.completion_tokens),
            request_hash=rec.request_hash,
        )

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]:
        h = canonical_hash(embed_request(list(texts), model))
        return self._next(h, texts[0] if texts else "").response


def transport_mode(config: dict[str, Any]) -> str:
    """Resolve the transport mode named in ``config`` (default live)."""
    mode = str(config.get("transport", "live")).lower()
    if mode not in TRANSPORT_MODES:
        raise ValueError(f"transport must be one of {list(TRANSPORT_MODES)}, got {mode!r}")
    if mode == "replay":
        store = config.get("transcripts")
        if not store or not Path(store).exists():
            raise FileNotFoundError(f"replay needs an existing transcript store, got {store!r}")
    return mode
