from __future__ import annotations

import json

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypodisco.llm import (
    AuthenticationError,
    ChatExchange,
    ChatResponse,
    ContextLengthError,
    Gateway,
    LiveTransport,
    Message,
    RecordTransport,
    ReplayMissError,
    ReplayTransport,
    RetriesExhaustedError,
    ScriptedTransport,
    ScriptRule,
    TranscriptStore,
    TransientError,
    canonical_hash,
    transport_mode,
)


def exchange(text: str = "hello", model: str = "m") -> ChatExchange:
    return ChatExchange((Message("system", "be brief"), Message("user", text)), model=model)


def scripted(*answers: str) -> ScriptedTransport:
    return ScriptedTransport([ScriptRule(responses=list(answers))])


class Flaky:
    """Fails ``failures`` times with a transient error, then answers."""

    is_replay = False

    def __init__(self, failures: int):
        self.failures = failures
        self.calls = 0

    def chat(self, ex: ChatExchange) -> ChatResponse:
        self.calls += 1
        if self.calls <= self.failures:
            raise TransientError("503")
        return ChatResponse("ok", request_hash=ex.request_hash)

    def embed(self, texts, model):
        return [[3.0, 4.0] for _ in texts]


# ---------------------------------------------------------------- exchanges and hashing


def test_exchange_invariants():
    with pytest.raises(ValueError):
        ChatExchange((Message("user", "x"),))
    with pytest.raises(ValueError):
        ChatExchange((Message("system", "s"), Message("assistant", "a"), Message("assistant", "b")))
    with pytest.raises(ValueError):
        ChatExchange((Message("system", "s"),), temperature=-1)


def test_equal_exchanges_share_hash():
    assert exchange("same").request_hash == exchange("same").request_hash
    assert exchange("same").request_hash != exchange("same ").request_hash


@given(st.dictionaries(st.text(max_size=8), st.integers(), max_size=8))
def test_hash_ignores_key_order(d):
    reordered = dict(reversed(list(d.items())))
    assert canonical_hash(d) == canonical_hash(reordered)


# ---------------------------------------------------------------- retries


def test_retry_then_success():
    delays = []
    gw = Gateway(Flaky(2), sleep=delays.append)
    assert gw.complete(exchange()).text == "ok"
    assert delays == [1.0, 2.0]


def test_retries_exhausted_and_backoff_bound():
    delays = []
    gw = Gateway(Flaky(10), sleep=delays.append)
    with pytest.raises(RetriesExhaustedError):
        gw.complete(exchange())
    assert sum(delays) <= 7.0


def test_embed_is_unit_normalized():
    vecs = Gateway(Flaky(0), sleep=lambda s: None).embed(["a", "b", "c"])
    assert vecs.shape == (3, 2)
    assert np.allclose(np.linalg.norm(vecs, axis=1), 1.0, atol=1e-6)


def test_embed_rejects_empty_text():
    with pytest.raises(ValueError):
        Gateway(Flaky(0)).embed(["ok", "  "])


def test_scripted_embeddings_identical_for_identical_text():
    gw = Gateway(scripted("x"))
    a, b = gw.embed(["same text", "same text"])
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- record / replay


def test_record_then_replay(tmp_path):
    store = TranscriptStore(tmp_path / "t.jsonl")
    live = Gateway(RecordTransport(scripted("first", "second"), store), pricing={"m": (1.0, 1.0)})
    a = live.complete(exchange("q1")).text
    b = live.complete(exchange("q2")).text
    emb = live.embed(["alpha beta"])
    assert live.usage.cost > 0

    replay = Gateway(ReplayTransport(TranscriptStore(tmp_path / "t.jsonl")), pricing={"m": (1.0, 1.0)})
    assert replay.complete(exchange("q1")).text == a
    assert replay.complete(exchange("q2")).text == b
    assert np.array_equal(replay.embed(["alpha beta"]), emb)
    assert replay.usage.cost == 0.0


def test_replay_miss_names_hash_and_prompt(tmp_path):
    store = TranscriptStore(tmp_path / "t.jsonl")
    Gateway(RecordTransport(scripted("x"), store)).complete(exchange("original prompt"))
    replay = Gateway(ReplayTransport(TranscriptStore(tmp_path / "t.jsonl")))
    mutated = exchange("mutated prompt " + "y" * 200)
    with pytest.raises(ReplayMissError) as info:
        replay.complete(mutated)
    message = str(info.value)
    assert mutated.request_hash in message
    assert ("mutated prompt " + "y" * 200)[:80] in message
    assert ("mutated prompt " + "y" * 200)[:81] not in message


def test_transport_mode(tmp_path):
    assert transport_mode({}) == "live"
    with pytest.raises(FileNotFoundError):
        transport_mode({"transport": "replay", "transcripts": str(tmp_path / "none.jsonl")})
    with pytest.raises(ValueError):
        transport_mode({"transport": "carrier-pigeon"})


# ---------------------------------------------------------------- live wire protocol


def _live(handler) -> LiveTransport:
    return LiveTransport("k", "https://llm.invalid/v1", client=httpx.Client(transport=httpx.MockTransport(handler)))


def test_live_chat_payload_and_parse():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hi"}, "finish_reason": "stop"}],
                                         "usage": {"prompt_tokens": 7, "completion_tokens": 1}})

    ex = exchange("ping").with_message(Message("assistant", "a")).with_message(Message("tool", "result"))
    resp = _live(handler).chat(ex)
    assert resp.text == "hi" and resp.usage.prompt_tokens == 7
    assert seen["url"].endswith("/chat/completions")
    assert seen["auth"] == "Bearer k"
    assert [m["role"] for m in seen["body"]["messages"]] == ["system", "user", "assistant", "user"]


@pytest.mark.parametrize(
    ("status", "body", "error"),
    [
        (401, "{}", AuthenticationError),
        (429, "{}", TransientError),
        (503, "{}", TransientError),
        (400, '{"error": {"code": "context_length_exceeded"}}', ContextLengthError),
    ],
)
def test_live_error_mapping(status, body, error):
    transport = _live(lambda r: httpx.Response(status, text=body))
    with pytest.raises(error):
        transport.chat(exchange())


def test_missing_credential_fails_before_request(monkeypatch):
    monkeypatch.delenv("HYPODISCO_API_KEY", raising=False)
    with pytest.raises(AuthenticationError):
        LiveTransport.from_env()


def test_live_embeddings_sorted_by_index():
    def handler(request):
        return httpx.Response(200, json={"data": [{"index": 1, "embedding": [0, 1]}, {"index": 0, "embedding": [1, 0]}]})

    assert _live(handler).embed(["a", "b"], "e") == [[1.0, 0.0], [0.0, 1.0]]


# ---------------------------------------------------------------- scripted provider


def test_scripted_branch_group_substitution():
    rule = ScriptRule(branches=[(r"steps (\d+), (\d+)", "Headline Step: {g2}")], default="plan")
    transport = ScriptedTransport([rule])
    assert transport.chat(exchange("nothing yet")).text == "plan"
    assert transport.chat(exchange("Plan executed (steps 4, 5).")).text == "Headline Step: 5"


def test_in_flight_limit_validated():
    with pytest.raises(ValueError):
        Gateway(Flaky(0), max_in_flight=0)
