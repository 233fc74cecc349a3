"""Retrying, rate-limited front door to a transport, with usage accounting."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .messages import ChatExchange, ChatResponse, Usage
from .transports import RetriesExhaustedError, TransientError, Transport

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURES = {"generator": 0.7, "experimenter": 0.2, "annotator": 0.0}


@dataclass
class UsageTotals:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost: float = 0.0


class Gateway:
    """Chat and embedding calls with retries and an in-flight limit.

    Transient failures are retried up to ``attempts`` times in total with
    exponential backoff ``base_delay * 2**k`` (1 s then 2 s by default).
    ``pricing`` maps a model name to (prompt, completion) cost per 1k
    tokens; replayed answers always cost 0.
    """

    def __init__(
        self,
        transport: Transport,
        max_in_flight: int = 8,
        attempts: int = 3,
        base_delay: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        pricing: Mapping[str, tuple[float, float]] | None = None,
        embedding_model: str = "default-embedding",
    ):
        if max_in_flight < 1 or attempts < 1:
            raise ValueError("max_in_flight and attempts must be positive")
        self.transport = transport
        self.attempts = attempts
        self.base_delay = base_delay
        self.sleep = sleep
        self.pricing = dict(pricing or {})
        self.embedding_model = embedding_model
        self.usage = UsageTotals()
        self._limiter = threading.BoundedSemaphore(max_in_flight)
        self._usage_lock = threading.Lock()

    def _retrying(self, fn: Callable[[], object], what: str):
        for attempt in range(self.attempts):
            try:
                with self._limiter:
                    return fn()
            except TransientError as exc:
                if attempt == self.attempts - 1:
                    raise RetriesExhaustedError(f"{what} failed after {self.attempts} attempts: {exc}") from exc
                delay = self.base_delay * (2 ** attempt)
                logger.warning("%s: transient failure (%s); retrying in %.1fs", what, exc, delay)
                self.sleep(delay)
        raise AssertionError("unreachable")

    def complete(self, exchange: ChatExchange) -> ChatResponse:
        resp: ChatResponse = self._retrying(lambda: self.transport.chat(exchange), "completion")
        cost = 0.0
        if not self.transport.is_replay and exchange.model in self.pricing:
            p_in, p_out = self.pricing[exchange.model]
            cost = (resp.usage.prompt_tokens * p_in + resp.usage.completion_tokens * p_out) / 1000.0
        with self._usage_lock:
            self.usage.calls += 1
            self.usage.prompt_tokens += resp.usage.prompt_tokens
            self.usage.completion_tokens += resp.usage.completion_tokens
            self.usage.cost += cost
        return ChatResponse(
            text=resp.text,
            usage=Usage(resp.usage.prompt_tokens, resp.usage.completion_tokens, resp.usage.latency_ms, cost),
            request_hash=exchange.request_hash,
        )

    def embed(self, texts: Sequence[str], model: str | None = None) -> np.ndarray:
        """Unit-normalized embeddings, one row per text."""
        texts = list(texts)
        if not texts:
            raise ValueError("embed needs at least one text")
        if any(not t.strip() for t in texts):
            raise ValueError("embed texts must be non-empty")
        model = model or self.embedding_model
        raw = self._retrying(lambda: self.transport.embed(texts, model), "embedding")
        vecs = np.asarray(raw, dtype=float)
        if vecs.ndim != 2 or vecs.shape[0] != len(texts):
            raise ValueError(f"provider returned {vecs.shape} embeddings for {len(texts)} texts")
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        if (norms == 0).any():
            raise ValueError("provider returned a zero embedding")
        with self._usage_lock:
            self.usage.calls += 1
        return vecs / norms
