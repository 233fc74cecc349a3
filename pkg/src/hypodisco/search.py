"""Two-phase hypothesis search with a diversity-pruned bank.

The outer loop seeds one hypothesis per iteration from a fresh digest and
the current bank; the inner loop refines it for up to T steps. After the
inner loop at most one refinement enters the bank, gated at alpha / T.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .agents import (
    AnalysisReport,
    ExperimenterConfig,
    GeneratorProposal,
    IterationStatus,
    SessionMemory,
    TurnRecord,
    build_generator_prompt,
    request_proposal,
    run_experimenter,
)
from .dataset import Dataset, SamplingStrategy, render_row, sample_observations, summarize
from .features import Budget, ExperimentSession, step_to_dict
from .llm import ChatExchange, GatewayError
from .stats import bonferroni_threshold

logger = logging.getLogger(__name__)

BANK_FORMAT = "hypodisco-bank"
LOG_FORMAT = "hypodisco-session-log"
FORMAT_VERSION = 1
# Largest number of candidate subsets enumerated exactly when pruning.
EXACT_SUBSET_BUDGET = 50_000


@dataclass(frozen=True)
class SearchConfig:
    outer_iterations: int = 10
    refinement_steps: int = 4
    bank_capacity: int = 20
    alpha: float = 0.05
    sampling: SamplingStrategy = field(default_factory=SamplingStrategy)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.outer_iterations < 1 or self.refinement_steps < 1 or self.bank_capacity < 1:
            raise ValueError("N, T and K must all be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def threshold(self) -> float:
        return bonferroni_threshold(self.alpha, self.refinement_steps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "outer_iterations": self.outer_iterations,
            "refinement_steps": self.refinement_steps,
            "bank_capacity": self.bank_capacity,
            "alpha": self.alpha,
            "sampling": str(self.sampling),
            "rng_seed": self.rng_seed,
        }


@dataclass(frozen=True)
class HypothesisRecord:
    id: str
    text: str
    i: int
    j: int
    report: AnalysisReport
    accepted: bool = False
    embedding: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.embedding is not None:
            norm = float(np.linalg.norm(self.embedding))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"embedding of {self.id} has norm {norm:.6f}, expected 1")

    @staticmethod
    def make_id(i: int, j: int) -> str:
        return f"h{i:03d}-{j}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "i": self.i,
            "j": self.j,
            "accepted": self.accepted,
            "embedding": list(self.embedding) if self.embedding is not None else None,
            "report": self.report.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> HypothesisRecord:
        emb = data.get("embedding")
        return cls(
            id=data["id"],
            text=data["text"],
            i=int(data["i"]),
            j=int(data["j"]),
            report=AnalysisReport.from_dict(data["report"]),
            accepted=bool(data.get("accepted", False)),
            embedding=tuple(float(v) for v in emb) if emb is not None else None,
        )


@dataclass
class HypothesisBank:
    capacity: int
    entries: list[HypothesisRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("bank capacity must be at least 1")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def texts(self) -> list[str]:
        return [r.text for r in self.entries]

    def embeddings(self) -> np.ndarray:
        if any(r.embedding is None for r in self.entries):
            raise ValueError("every bank entry needs an embedding")
        return np.array([r.embedding for r in self.entries], dtype=float).reshape(len(self.entries), -1)

    def add(self, record: HypothesisRecord) -> bool:
        """Append ``record`` unless its text is already banked."""
        if record.text in self.texts:
            return False
        self.entries.append(record)
        return True

    def to_jsonl(self) -> str:
        header = {"format": BANK_FORMAT, "version": FORMAT_VERSION, "capacity": self.capacity}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(r.to_dict(), sort_keys=True) for r in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> HypothesisBank:
        lines = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not lines or lines[0].get("format") != BANK_FORMAT:
            raise ValueError("not a hypothesis bank file (missing header record)")
        if lines[0].get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported bank version {lines[0].get('version')}")
        return cls(int(lines[0]["capacity"]), [HypothesisRecord.from_dict(d) for d in lines[1:]])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> HypothesisBank:
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------- selection


def records_from_memory(memory: SessionMemory, i: int) -> list[HypothesisRecord]:
    return [HypothesisRecord(HypothesisRecord.make_id(i, j), text, i, j, report)
            for j, (text, report) in enumerate(memory.entries, start=1)]


def _refuted(records: Sequence[HypothesisRecord], k: int) -> bool:
    """A later testing-mode report on the same headline feature came back unsupported."""
    feature = records[k].report.headline_feature
    return any(
        r.report.test_mode and r.report.verdict == "unsupported" and r.report.headline_feature == feature
        for r in records[k + 1:]
    )


def select_accepted(
    memory: SessionMemory | Sequence[HypothesisRecord], alpha: float, T: int, i: int = 1
) -> HypothesisRecord | None:
    """Pick at most one refinement: supported, p < alpha / T, largest support.

    Ties go to the smaller p, then the earlier refinement. A candidate is
    dropped when a later refinement tested the same headline feature and
    found it unsupported (for example after adding a control).
    """
    records = records_from_memory(memory, i) if isinstance(memory, SessionMemory) else list(memory)
    threshold = bonferroni_threshold(alpha, T)
    candidates = [
        (k, r) for k, r in enumerate(records)
        if r.report.test_mode and r.report.verdict == "supported"
        and r.report.headline_p is not None and r.report.headline_p < threshold
        and not _refuted(records, k)
    ]
    if not candidates:
        return None
    k, best = min(candidates, key=lambda kr: (-(kr[1].report.support_n or 0), kr[1].report.headline_p, kr[1].j))
    return HypothesisRecord(best.id, best.text, best.i, best.j, best.report, accepted=True)


# --------------------------------------------------------------------------- diversity


def cosine_distances(vectors: np.ndarray) -> np.ndarray:
    v = np.asarray(vectors, dtype=float)
    return np.clip(1.0 - v @ v.T, 0.0, 2.0)


def farthest_point_indices(vectors: np.ndarray, k: int) -> list[int]:
    """Greedy max-min selection, seeded with the farthest pair.

    Ties resolve to the lower index. Returns sorted indices.
    """
    n = len(vectors)
    if n <= k:
        return list(range(n))
    d = cosine_distances(vectors)
    if k == 1:
        return [0]
    best_pair, best = (0, 1), -1.0
    for a, b in itertools.combinations(range(n), 2):
        if d[a, b] > best:
            best_pair, best = (a, b), d[a, b]
    chosen = list(best_pair)
    min_dist = np.minimum(d[chosen[0]], d[chosen[1]])
    while len(chosen) < k:
        masked = np.where(np.isin(np.arange(n), chosen), -np.inf, min_dist)
        nxt = int(np.argmax(masked))  # first maximum, i.e. earliest entry
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, d[nxt])
    return sorted(chosen)


def min_pairwise_distance(vectors: np.ndarray) -> float:
    d = cosine_distances(vectors)
    n = len(d)
    if n < 2:
        return float("inf")
    return float(min(d[a, b] for a, b in itertools.combinations(range(n), 2)))


def max_min_indices(vectors: np.ndarray, k: int, budget: int = EXACT_SUBSET_BUDGET) -> list[int]:
    """Subset of size ``k`` with the largest minimum pairwise cosine distance.

    Enumerates all subsets when there are at most ``budget`` of them (the
    lexicographically first optimum wins ties, so earlier entries are kept)
    and falls back to farthest-point greedy otherwise.
    """
    n = len(vectors)
    if n <= k:
        return list(range(n))
    if k == 1 or math.comb(n, k) > budget:
        return farthest_point_indices(vectors, k)
    d = cosine_distances(vectors)
    best, best_subset = -np.inf, None
    for subset in itertools.combinations(range(n), k):
        sub = d[np.ix_(subset, subset)]
        value = sub[np.triu_indices(k, 1)].min()
        if value > best:
            best, best_subset = value, subset
    return list(best_subset)


def prune_bank(bank: HypothesisBank) -> tuple[HypothesisBank, list[HypothesisRecord]]:
    """Shrink ``bank`` to capacity, keeping the most mutually distant entries.

    Returns the pruned bank (entries in their original order) and the
    removed records.
    """
    if len(bank) <= bank.capacity:
        return HypothesisBank(bank.capacity, list(bank.entries)), []
    keep = set(max_min_indices(bank.embeddings(), bank.capacity))
    kept = [r for k, r in enumerate(bank.entries) if k in keep]
    removed = [r for k, r in enumerate(bank.entries) if k not in keep]
    return HypothesisBank(bank.capacity, kept), removed


def novelty_score(candidate: np.ndarray, bank: HypothesisBank) -> float:
    """Smallest cosine distance from ``candidate`` to the bank; 2.0 when empty."""
    if len(bank) == 0:
        return 2.0
    d = 1.0 - bank.embeddings() @ np.asarray(candidate, dtype=float)
    return float(np.clip(d.min(), 0.0, 2.0))


# --------------------------------------------------------------------------- discovery loop


@dataclass
class Roles:
    """Everything the loop needs to talk to models and run plans."""

    gateway: Any
    annotator: Any = None
    task_description: str = ""
    dataset_name: str = "dataset"
    generator_model: str = "generator"
    generator_temperature: float = 0.7
    experimenter: ExperimenterConfig = field(default_factory=ExperimenterConfig)
    budget: Budget = field(default_factory=Budget)
    embedding_model: str | None = None


class SessionLog:
    """Append-only JSONL event log; holds no timing fields so replays match byte for byte."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.events: list[dict[str, Any]] = []
        if self.path is not None and self.path.exists():
            self.events = [json.loads(l) for l in self.path.read_text(encoding="utf-8").splitlines() if l.strip()]

    def write(self, event: str, **payload: Any) -> None:
        record = {"event": event, **payload}
        self.events.append(record)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def completed_iterations(self) -> set[int]:
        return {e["i"] for e in self.events if e["event"] == "iteration_end"}

    def has_header(self) -> bool:
        return any(e["event"] == "header" for e in self.events)


def _turn_payload(turn: TurnRecord) -> dict[str, Any]:
    return {
        "turn": turn.turn,
        "kind": turn.kind,
        "reply": turn.reply,
        "plan": [{"step": s, **step_to_dict(st)} for s, st in turn.plan],
        "outcome": turn.outcome.to_dict() if turn.outcome is not None else None,
        "error": turn.error,
        "failed_step": turn.failed_step,
    }


def iteration_seed(rng_seed: int, i: int) -> int:
    return int(np.random.SeedSequence([rng_seed, i]).generate_state(1)[0])


def _sampling_aux(
    dataset: Dataset, strategy: SamplingStrategy, bank: HypothesisBank, roles: Roles,
    cache: dict[str, np.ndarray],
) -> np.ndarray | None:
    if strategy.kind == "boosting":
        if len(bank) == 0:
            return np.ones(dataset.row_count)
        from .inference import prediction_errors

        return prediction_errors(bank, dataset, roles.annotator)
    if strategy.kind == "clustering":
        if "rows" not in cache:
            outcome = [dataset.outcome_column] if dataset.outcome_column else []
            rows = [render_row(dataset, r, exclude=outcome) for r in range(dataset.row_count)]
            cache["rows"] = roles.gateway.embed(rows, roles.embedding_model)
        return cache["rows"]
    return None


def run_iteration(
    i: int,
    dataset: Dataset,
    config: SearchConfig,
    roles: Roles,
    bank: HypothesisBank,
    log: SessionLog,
    aux_cache: dict[str, np.ndarray] | None = None,
) -> HypothesisRecord | None:
    """One outer iteration: seed, refine T times, select. Returns the accepted record."""
    aux = _sampling_aux(dataset, config.sampling, bank, roles, aux_cache if aux_cache is not None else {})
    sample = sample_observations(dataset, config.sampling, iteration_seed(config.rng_seed, i), aux)
    digest = summarize(dataset, sample)
    log.write("iteration_start", i=i, sample_rows=sample, bank_ids=[r.id for r in bank])
    session = ExperimentSession(dataset, roles.annotator, roles.budget)
    memory = SessionMemory()
    T = config.refinement_steps

    previous: AnalysisReport | None = None
    for j in range(1, T + 1):
        exchange = build_generator_prompt(
            roles.task_description, digest, bank.texts, memory, IterationStatus(i, config.outer_iterations, j, T),
            previous_analysis=previous.summary() if previous else None,
            current_hypothesis=memory.hypotheses[-1] if len(memory) else None,
            model=roles.generator_model, temperature=roles.generator_temperature,
        )

        def log_generator(ex: ChatExchange, reply: str, j: int = j) -> None:
            log.write("generator_exchange", i=i, j=j, prompt=ex.prompt_text, response=reply)

        proposal: GeneratorProposal = request_proposal(roles.gateway, exchange, log_generator)
        log.write("proposal", i=i, j=j, proposal=proposal.to_dict())

        def log_turn(turn: TurnRecord, j: int = j) -> None:
            log.write("experimenter_turn", i=i, j=j, **_turn_payload(turn))

        report = run_experimenter(
            proposal, session, roles.gateway, roles.task_description, str(digest),
            dataset_name=roles.dataset_name, config=roles.experimenter, on_turn=log_turn,
        )
        log.write("report", i=i, j=j, id=HypothesisRecord.make_id(i, j), report=report.to_dict())
        memory.add(proposal.hypothesis, report)
        previous = report

    chosen = select_accepted(memory, config.alpha, T, i)
    log.write(
        "selection", i=i, threshold=config.threshold,
        candidates=[{"id": r.id, "verdict": r.report.verdict, "p": r.report.headline_p,
                     "support_n": r.report.support_n} for r in records_from_memory(memory, i)],
        accepted=chosen.id if chosen else None,
    )
    return chosen


def _embed_record(record: HypothesisRecord, roles: Roles, bank: HypothesisBank, log: SessionLog) -> HypothesisRecord:
    vec = roles.gateway.embed([record.text], roles.embedding_model)[0]
    emb = tuple(float(v) for v in vec)
    novelty = novelty_score(vec, bank)
    log.write("novelty", i=record.i, id=record.id, novelty=novelty)
    return HypothesisRecord(record.id, record.text, record.i, record.j, record.report, True, emb)


def run_discovery(
    dataset: Dataset,
    config: SearchConfig,
    roles: Roles,
    bank: HypothesisBank | None = None,
    log: SessionLog | None = None,
    on_iteration: Callable[[int, HypothesisBank], None] | None = None,
) -> tuple[HypothesisBank, SessionLog]:
    """Run N outer iterations. A failed iteration is logged and skipped.

    Iterations already marked complete in ``log`` are not rerun, which is
    how an interrupted run resumes.
    """
    if dataset.outcome_column is None:
        raise ValueError("discovery needs a dataset with an outcome column")
    bank = bank if bank is not None else HypothesisBank(config.bank_capacity)
    log = log if log is not None else SessionLog()
    if not log.has_header():
        log.write("header", format=LOG_FORMAT, version=FORMAT_VERSION, config=config.to_dict(),
                  dataset=roles.dataset_name, outcome=dataset.outcome_column, rows=dataset.row_count)
    done = log.completed_iterations()
    aux_cache: dict[str, np.ndarray] = {}
    for i in range(1, config.outer_iterations + 1):
        if i in done:
            continue
        try:
            chosen = run_iteration(i, dataset, config, roles, bank, log, aux_cache)
        except (GatewayError, ValueError, RuntimeError) as exc:
            logger.warning("iteration %d abandoned: %s", i, exc)
            log.write("iteration_failed", i=i, error=f"{type(exc).__name__}: {exc}")
            log.write("iteration_end", i=i, status="failed")
            continue
        if chosen is not None:
            if chosen.text in bank.texts:
                log.write("bank_duplicate", i=i, id=chosen.id)
            else:
                record = _embed_record(chosen, roles, bank, log)
                bank.add(record)
                log.write("bank_add", i=i, id=record.id, text=record.text, p=record.report.headline_p)
                bank, removed = prune_bank(bank)
                if removed:
                    log.write("prune", i=i, removed=[r.id for r in removed], kept=[r.id for r in bank])
        log.write("iteration_end", i=i, status="ok", bank_ids=[r.id for r in bank])
        if on_iteration:
            on_iteration(i, bank)
    return bank, log


class HypothesisSearch:
    """Estimator-style wrapper: ``fit(dataset)`` runs discovery, ``bank_`` holds the result."""

    def __init__(self, roles: Roles, config: SearchConfig | None = None):
        self.roles = roles
        self.config = config or SearchConfig()

    def fit(self, dataset: Dataset, bank: HypothesisBank | None = None) -> HypothesisSearch:
        self.bank_, self.log_ = run_discovery(dataset, self.config, self.roles, bank)
        return self

    @property
    def hypotheses_(self) -> list[str]:
        return self.bank_.texts


def accepted_records(events: Iterable[dict[str, Any]]) -> list[str]:
    return [e["id"] for e in events if e["event"] == "bank_add"]
