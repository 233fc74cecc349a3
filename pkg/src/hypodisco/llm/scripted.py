"""Deterministic stand-in provider for fixtures and tests.

Responses come from ordered rules. A rule matches on model name and a
regex over the whole exchange text; it then answers from a fixed queue
(the last entry repeats), from conditional branches over the latest
user/tool message, or from a Python callable. Branch replies may cite
regex groups of their condition as ``{g1}``, ``{g2}`` and so on.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from .messages import ChatExchange, ChatResponse, Usage
from .transports import GatewayError

_TOKEN = re.compile(r"[a-z0-9']+")
_GROUP_REF = re.compile(r"\{g(\d+)\}")


def exchange_text(exchange: ChatExchange) -> str:
    return "\n".join(m.content for m in exchange.messages)


@dataclass
class ScriptRule:
    match: str = ""
    model: str | None = None
    responses: list[str] = field(default_factory=list)
    branches: list[tuple[str, str]] = field(default_factory=list)
    default: str | None = None
    respond: Callable[[ChatExchange], str] | None = None
    _served: int = 0

    def __post_init__(self) -> None:
        self._pattern = re.compile(self.match, re.DOTALL) if self.match else None
        self._branches = [(re.compile(p, re.DOTALL), text) for p, text in self.branches]
        if not (self.responses or self.branches or self.respond or self.default is not None):
            raise ValueError("a script rule needs responses, branches, default or respond")

    def matches(self, exchange: ChatExchange) -> bool:
        if self.model is not None and exchange.model != self.model:
            return False
        return self._pattern is None or self._pattern.search(exchange_text(exchange)) is not None

    def answer(self, exchange: ChatExchange) -> str:
        if self.respond is not None:
            return self.respond(exchange)
        if self._branches:
            prompt = exchange.prompt_text
            for pattern, text in self._branches:
                m = pattern.search(prompt)
                if m:
                    return _GROUP_REF.sub(lambda g: m.group(int(g.group(1))) or "", text)
            if self.default is not None:
                return self.default
        if self.responses:
            k = min(self._served, len(self.responses) - 1)
            self._served += 1
            return self.responses[k]
        if self.default is not None:
            return self.default
        raise GatewayError(f"script rule {self.match!r} has no branch for the prompt")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScriptRule:
        branches = [(b["if"], b["then"]) for b in data.get("branches", ())]
        return cls(
            match=data.get("match", ""),
            model=data.get("model"),
            responses=list(data.get("responses", ())),
            branches=branches,
            default=data.get("default"),
        )


class HashingEmbedder:
    """Signed feature-hashing bag of words; similar texts get similar vectors."""

    def __init__(self, dim: int = 256):
        self.dim = dim

    def __call__(self, text: str) -> list[float]:
        vec = np.zeros(self.dim)
        tokens = _TOKEN.findall(text.lower()) or [text]
        for tok in tokens:
            digest = hashlib.sha256(tok.encode("utf-8")).digest()
            idx = int.from_bytes(digest[:4], "little") % self.dim
            vec[idx] += 1.0 if digest[4] & 1 else -1.0
        if not vec.any():
            vec[0] = 1.0
        return [float(v) for v in vec]


class ScriptedTransport:
    """Rule-driven provider; first matching rule answers."""

    is_replay = False

    def __init__(self, rules: Sequence[ScriptRule], embedder: HashingEmbedder | None = None):
        self.rules = list(rules)
        self.embedder = embedder or HashingEmbedder()
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedTransport:
        """Load rules from a YAML or JSON list of rule objects."""
        text = Path(path).read_text(encoding="utf-8")
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        rules = data.get("rules", []) if isinstance(data, dict) else data
        dim = data.get("embedding_dim", 256) if isinstance(data, dict) else 256
        return cls([ScriptRule.from_dict(r) for r in rules], HashingEmbedder(dim))

    def add(self, rule: ScriptRule) -> None:
        self.rules.append(rule)

    def chat(self, exchange: ChatExchange) -> ChatResponse:
        with self._lock:
            self.calls += 1
            for rule in self.rules:
                if rule.matches(exchange):
                    text = rule.answer(exchange)
                    break
            else:
                raise GatewayError(f"no script rule matches prompt {exchange.prompt_text[:80]!r}")
        prompt_tokens = sum(len(m.content.split()) for m in exchange.messages)
        return ChatResponse(
            text=text,
            usage=Usage(prompt_tokens=prompt_tokens, completion_tokens=len(text.split())),
            request_hash=exchange.request_hash,
        )

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]:
        return [self.embedder(t) for t in texts]
