"""Experimenter role: a bounded multi-turn loop of plans, results and a final report."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from typing import Callable

from ..features import (
    FEATURIZERS,
    ExperimentSession,
    PlanExecutionError,
    PlanFormatError,
    PlanOutcome,
    PlanStep,
    PlanValidationError,
    plan_from_jsonl,
    step_from_dict,
)
from ..llm import ChatExchange, Message
from ..prompting import render
from ..stats import INTERCEPT, RegressionResult, TestResult
from .generator import GeneratorProposal
from .report import AnalysisReport, ReportParseError, inconclusive_report, looks_like_report, parse_report

logger = logging.getLogger(__name__)

_PLAN_BLOCK_RE = re.compile(r"```[ \t]*plan[ \t]*\n(.*?)```", re.DOTALL | re.IGNORECASE)


@dataclass(frozen=True)
class ExperimenterConfig:
    max_turns: int = 12
    max_consecutive_failures: int = 3
    model: str = "experimenter"
    temperature: float = 0.2
    max_output_tokens: int = 4096

    def __post_init__(self) -> None:
        if self.max_turns < 1 or self.max_consecutive_failures < 1:
            raise ValueError("turn limits must be positive")


@dataclass(frozen=True)
class TurnRecord:
    """One completion of the loop, as written to the session log."""

    turn: int
    reply: str
    kind: str  # plan | report | invalid
    plan: tuple[tuple[int, PlanStep], ...] = ()
    outcome: PlanOutcome | None = None
    error: str | None = None
    failed_step: int | None = None


def build_experimenter_exchange(
    proposal: GeneratorProposal,
    task_description: str,
    digest_text: str,
    dataset_name: str,
    outcome_column: str,
    config: ExperimenterConfig | None = None,
) -> ChatExchange:
    config = config or ExperimenterConfig()
    system = render("experimenter_system", task_description=task_description, featurizers=sorted(FEATURIZERS))
    user = render(
        "experimenter_user",
        dataset_name=dataset_name,
        outcome=outcome_column,
        digest=digest_text.rstrip("\n"),
        hypothesis=proposal.hypothesis,
        request=proposal.request,
        test_mode=proposal.test_mode,
    )
    return ChatExchange((Message("system", system), Message("user", user)), model=config.model,
                        temperature=config.temperature, max_output_tokens=config.max_output_tokens)


def extract_plan(reply: str) -> list[PlanStep] | None:
    """Steps of the first ```plan block, or None when the reply has none.

    The block may hold one JSON step per line or a single JSON array.
    """
    m = _PLAN_BLOCK_RE.search(reply)
    if m is None:
        return None
    body = m.group(1).strip()
    if body.startswith("["):
        try:
            items = json.loads(body)
        except json.JSONDecodeError as exc:
            raise PlanFormatError(f"plan array is not valid JSON: {exc}") from None
        if not isinstance(items, list):
            raise PlanFormatError("plan array must be a JSON list")
        return [step_from_dict(item) for item in items]
    return plan_from_jsonl(body)


def _fmt(x: float | None) -> str:
    if x is None:
        return "NA"
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return f"{x:.4g}"


def render_result(step: int, result: TestResult | RegressionResult) -> list[str]:
    if isinstance(result, TestResult):
        eff = result.effect
        line = (f"step {step}: {result.test_name} statistic={_fmt(result.statistic)} p={result.p_two_sided:.4g} "
                f"{eff.kind}={_fmt(eff.value)}")
        if eff.ci_low is not None:
            line += f" [95% CI {_fmt(eff.ci_low)}, {_fmt(eff.ci_high)}]"
        if result.degrees_of_freedom is not None:
            line += f" df={_fmt(result.degrees_of_freedom)}"
        line += f" group sizes={list(result.group_sizes)}"
        lines = [line]
        lines += [f"    {e.kind}={_fmt(e.value)}" + (f" [95% CI {_fmt(e.ci_low)}, {_fmt(e.ci_high)}]"
                                                      if e.ci_low is not None else "")
                  for e in result.extra_effects]
        return lines
    lines = [f"step {step}: logistic_regression n={result.n} converged={result.converged}"]
    for name, c in result.coefficients.items():
        extra = "" if name == INTERCEPT else f" OR={_fmt(math.exp(c.beta)) if abs(c.beta) < 700 else 'inf'}"
        lines.append(f"    {name}: beta={_fmt(c.beta)} se={_fmt(c.std_err)} z={_fmt(c.wald_z)} p={c.p:.4g}{extra}")
    return lines


def render_outcome(outcome: PlanOutcome) -> str:
    lines = ["Plan executed (steps " + ", ".join(map(str, outcome.step_numbers)) + ")."]
    if outcome.created_columns:
        lines.append("Created columns: " + ", ".join(outcome.created_columns))
    results = sorted([*outcome.test_results, *outcome.regression_results], key=lambda sr: sr[0])
    for step, result in results:
        lines += render_result(step, result)
    lines.append(f"Rows in scope at end of plan: {outcome.rows_remaining}")
    lines += [f"Warning: {w}" for w in outcome.warnings]
    return "\n".join(lines)


def run_experimenter(
    proposal: GeneratorProposal,
    session: ExperimentSession,
    gateway,
    task_description: str,
    digest_text: str,
    dataset_name: str = "dataset",
    config: ExperimenterConfig | None = None,
    on_turn: Callable[[TurnRecord], None] | None = None,
) -> AnalysisReport:
    """Drive the Experimenter until it reports, runs out of turns, or keeps failing.

    Plans are executed in ``session`` as soon as they arrive and their
    results go back as tool messages. Issues at most ``max_turns``
    completion calls.
    """
    config = config or ExperimenterConfig()
    outcome_column = session.dataset.outcome_column
    if outcome_column is None:
        raise ValueError("the dataset has no outcome column")
    exchange = build_experimenter_exchange(
        proposal, task_description, digest_text, dataset_name, outcome_column, config
    )
    results: dict[int, TestResult | RegressionResult] = {}
    steps: dict[int, PlanStep] = {}
    warnings: list[str] = []
    failures = 0

    def finish(report: AnalysisReport, turns: int) -> AnalysisReport:
        merged = tuple(dict.fromkeys([*warnings, *report.warnings]))
        return AnalysisReport(**{**report.__dict__, "warnings": merged, "turns": turns})

    for turn in range(1, config.max_turns + 1):
        reply = gateway.complete(exchange).text
        exchange = exchange.with_message(Message("assistant", reply))
        record: TurnRecord
        try:
            plan = extract_plan(reply)
        except (PlanFormatError, ValueError, KeyError, TypeError) as exc:
            plan, problem = None, f"The plan block could not be parsed: {exc}"
            record = TurnRecord(turn, reply, "invalid", error=problem)
        else:
            problem = None
            if plan is None and not looks_like_report(reply):
                problem = "The reply held neither a plan block nor a final report."
                record = TurnRecord(turn, reply, "invalid", error=problem)

        if problem is None and plan is not None:
            base = session.steps_run
            try:
                outcome = session.run(plan)
            except PlanValidationError as exc:
                problem = "The plan was rejected before running:\n" + "\n".join(f"- {e}" for e in exc.errors)
                record = TurnRecord(turn, reply, "plan", error=problem)
            except PlanExecutionError as exc:
                done = exc.outcome
                numbered = tuple((base + k + 1, s) for k, s in enumerate(plan))
                steps.update((n, s) for n, s in numbered if n < exc.step)
                results.update(done.test_results)
                results.update(done.regression_results)
                partial = render_outcome(done) if exc.step > base + 1 else ""
                problem = f"Step {exc.step} failed: {exc.message}" + (f"\nCompleted before it:\n{partial}"
                                                                       if partial else "")
                record = TurnRecord(turn, reply, "plan", plan=numbered, outcome=done, error=problem,
                                    failed_step=exc.step)
            else:
                numbered = tuple(zip(outcome.step_numbers, plan))
                steps.update(numbered)
                results.update(outcome.test_results)
                results.update(outcome.regression_results)
                warnings.extend(outcome.warnings)
                record = TurnRecord(turn, reply, "plan", plan=numbered, outcome=outcome)
                failures = 0
                exchange = exchange.with_message(Message("tool", render_outcome(outcome)))
        elif problem is None:
            try:
                report = parse_report(reply, results, steps, proposal.hypothesis, proposal.test_mode,
                                      row_count=session.dataset.row_count)
            except ReportParseError as exc:
                problem = f"The report could not be accepted: {exc}"
                record = TurnRecord(turn, reply, "invalid", error=problem)
            else:
                if on_turn:
                    on_turn(TurnRecord(turn, reply, "report"))
                return finish(report, turn)

        if on_turn:
            on_turn(record)
        if problem is not None:
            failures += 1
            logger.info("experimenter turn %d: %s", turn, problem.splitlines()[0])
            if failures >= config.max_consecutive_failures:
                warning = f"aborted after {failures} consecutive failed turns; last problem: {problem.splitlines()[0]}"
                return finish(
                    inconclusive_report(proposal.hypothesis, proposal.test_mode, warning, results, steps, turn), turn
                )
            exchange = exchange.with_message(Message("tool", render("experimenter_retry", problem=problem)))

    warning = f"no final report within {config.max_turns} turns"
    return finish(inconclusive_report(proposal.hypothesis, proposal.test_mode, warning, results, steps,
                                      config.max_turns), config.max_turns)

