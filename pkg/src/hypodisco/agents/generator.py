"""Generator role: prompt assembly and proposal parsing."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from ..dataset import DatasetDigest
from ..llm import ChatExchange, Message
from ..prompting import render
from .report import AnalysisReport

PROPOSAL_KEYS = ("hypothesis", "request", "test")


class ProposalParseError(ValueError):
    def __init__(self, message: str, response: str = ""):
        self.response = response
        super().__init__(message)


@dataclass(frozen=True)
class GeneratorProposal:
    hypothesis: str
    request: str
    test_mode: bool

    def __post_init__(self) -> None:
        if not self.hypothesis.strip():
            raise ValueError("hypothesis must be non-empty")
        if not self.request.strip():
            raise ValueError("request must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"hypothesis": self.hypothesis, "request": self.request, "test": self.test_mode}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GeneratorProposal:
        return cls(data["hypothesis"], data["request"], bool(data["test"]))


@dataclass
class SessionMemory:
    """(hypothesis, report) pairs of one inner loop, in refinement order."""

    entries: list[tuple[str, AnalysisReport]] = field(default_factory=list)

    def add(self, hypothesis: str, report: AnalysisReport) -> None:
        self.entries.append((hypothesis, report))

    @property
    def hypotheses(self) -> list[str]:
        return [h for h, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class IterationStatus:
    i: int
    n: int
    j: int
    t: int

    def __post_init__(self) -> None:
        if not (1 <= self.i <= self.n and 1 <= self.j <= self.t):
            raise ValueError(f"iteration status out of range: {self}")


def build_generator_prompt(
    task_description: str,
    digest: DatasetDigest | str,
    bank: Sequence[str],
    memory: SessionMemory,
    iteration: IterationStatus,
    previous_analysis: str | None = None,
    current_hypothesis: str | None = None,
    model: str = "generator",
    temperature: float = 0.7,
) -> ChatExchange:
    """System message carries the role and task; the user message fills the
    iteration, digest, bank, session-history and latest-report slots."""
    system = render("generator_system", task_description=task_description)
    user = render(
        "generator_user",
        i=iteration.i, n=iteration.n, j=iteration.j, t=iteration.t,
        digest=str(digest).rstrip("\n"),
        bank=list(bank),
        history=memory.hypotheses,
        current_hypothesis=current_hypothesis,
        previous_analysis=previous_analysis,
    )
    return ChatExchange((Message("system", system), Message("user", user)), model=model,
                        temperature=temperature, max_output_tokens=1024)


def _coerce_bool(value: Any) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "false"):
        return value.strip().lower() == "true"
    return None


def parse_proposal(response: str) -> GeneratorProposal:
    """First JSON object in ``response`` with hypothesis, request and test keys.

    Surrounding prose and code fences are ignored.
    """
    decoder = json.JSONDecoder()
    pos = response.find("{")
    problem = "no JSON object found"
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(response, pos)
        except json.JSONDecodeError:
            pos = response.find("{", pos + 1)
            continue
        if isinstance(obj, dict):
            missing = [k for k in PROPOSAL_KEYS if k not in obj]
            test = _coerce_bool(obj.get("test"))
            if missing:
                problem = f"object is missing {missing}"
            elif not isinstance(obj["hypothesis"], str) or not isinstance(obj["request"], str):
                problem = "hypothesis and request must be strings"
            elif not obj["hypothesis"].strip() or not obj["request"].strip():
                problem = "hypothesis and request must be non-empty"
            elif test is None:
                problem = '"test" must be true or false'
            else:
                return GeneratorProposal(obj["hypothesis"].strip(), obj["request"].strip(), test)
        pos = response.find("{", pos + 1)
    raise ProposalParseError(f"unparseable proposal: {problem}", response)


def request_proposal(
    gateway, exchange: ChatExchange, on_exchange: Callable[[ChatExchange, str], None] | None = None
) -> GeneratorProposal:
    """Ask for a proposal, with one repair re-prompt if the reply does not parse."""
    reply = gateway.complete(exchange).text
    if on_exchange:
        on_exchange(exchange, reply)
    try:
        return parse_proposal(reply)
    except ProposalParseError:
        pass
    repair = exchange.with_message(Message("assistant", reply)).with_message(
        Message("user", render("proposal_repair"))
    )
    reply = gateway.complete(repair).text
    if on_exchange:
        on_exchange(repair, reply)
    return parse_proposal(reply)
