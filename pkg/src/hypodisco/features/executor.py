"""Plan execution with persistent cross-step and cross-plan column state."""

from __future__ import annotations

import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from ..dataset import Column, ColumnKind, Dataset, augment_column
from ..stats import (
    INTERCEPT,
    RegressionResult,
    SingularInformationError,
    TestResult,
    chi_square_independence,
    logistic_regression,
    mann_whitney_u,
    two_proportion_z,
    welch_t_test,
)
from .expr import Expression
from .featurizers import builtin_featurize
from .plan import (
    Derive,
    Featurize,
    Filter,
    GroupRank,
    PlanStep,
    Regress,
    Test,
    created_kind,
    creates,
    step_errors,
    step_to_dict,
)
from .spec import AnnotationJob

logger = logging.getLogger(__name__)

MAX_CHI_LEVELS = 20


class Annotator(Protocol):
    def annotate(self, job: AnnotationJob, dataset: Dataset) -> Any: ...


@dataclass(frozen=True)
class Budget:
    max_steps: int = 32
    per_step_time_limit: float = 30.0
    max_created_columns: int = 64

    def __post_init__(self) -> None:
        if self.max_steps < 1 or self.per_step_time_limit <= 0 or self.max_created_columns < 1:
            raise ValueError("budget limits must be positive")


@dataclass
class PlanOutcome:
    created_columns: list[str] = field(default_factory=list)
    test_results: list[tuple[int, TestResult]] = field(default_factory=list)
    regression_results: list[tuple[int, RegressionResult]] = field(default_factory=list)
    rows_remaining: int = 0
    warnings: list[str] = field(default_factory=list)
    step_numbers: tuple[int, ...] = ()

    def result_at(self, step: int) -> TestResult | RegressionResult | None:
        for s, r in [*self.test_results, *self.regression_results]:
            if s == step:
                return r
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "created_columns": list(self.created_columns),
            "test_results": [{"step": s, "result": r.to_dict()} for s, r in self.test_results],
            "regression_results": [{"step": s, "result": r.to_dict()} for s, r in self.regression_results],
            "rows_remaining": self.rows_remaining,
            "warnings": list(self.warnings),
            "step_numbers": list(self.step_numbers),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PlanOutcome:
        return cls(
            created_columns=list(data["created_columns"]),
            test_results=[(d["step"], TestResult.from_dict(d["result"])) for d in data["test_results"]],
            regression_results=[
                (d["step"], RegressionResult.from_dict(d["result"])) for d in data["regression_results"]
            ],
            rows_remaining=int(data["rows_remaining"]),
            warnings=list(data["warnings"]),
            step_numbers=tuple(data.get("step_numbers", ())),
        )


class PlanValidationError(ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("plan failed validation:\n" + "\n".join(f"- {e}" for e in self.errors))


class PlanExecutionError(RuntimeError):
    """A step failed; ``outcome`` holds everything finished before it."""

    def __init__(self, step: int, message: str, outcome: PlanOutcome):
        self.step = step
        self.message = message
        self.outcome = outcome
        super().__init__(f"step {step}: {message}")


class StepTimeoutError(PlanExecutionError):
    pass


class StepError(ValueError):
    """Raised inside a step; converted to PlanExecutionError with its number."""


# --------------------------------------------------------------------------- helpers


def group_rank(dataset: Dataset, group_key: str, order_by: str, direction: str = "ascending") -> np.ndarray:
    """1-based rank of each row within its group.

    Rank 1 is the smallest ``order_by`` value (largest when descending);
    ties keep original row order and null order values rank last. Null
    group keys form a group of their own.
    """
    kind = dataset.kind(order_by)
    if not kind.is_orderable:
        raise StepError(f"cannot order by {order_by!r} ({kind.value}); need numeric or timestamp")
    if direction not in ("ascending", "descending"):
        raise StepError("direction must be ascending or descending")
    order = np.asarray(dataset[order_by], dtype=float)
    keys = dataset[group_key]
    codes: dict[Any, int] = {}
    group = np.empty(order.size, dtype=int)
    for i, v in enumerate(keys):
        null = v is None or (isinstance(v, float) and math.isnan(v))
        group[i] = codes.setdefault(("__null__",) if null else ("v", v), len(codes))
    null_order = np.isnan(order)
    sort_val = np.where(null_order, 0.0, -order if direction == "descending" else order)
    idx = np.arange(order.size)
    perm = np.lexsort((idx, sort_val, null_order, group))
    sorted_groups = group[perm]
    starts = np.r_[True, sorted_groups[1:] != sorted_groups[:-1]]
    start_pos = np.maximum.accumulate(np.where(starts, np.arange(perm.size), 0))
    ranks = np.empty(order.size, dtype=int)
    ranks[perm] = np.arange(perm.size) - start_pos + 1
    return ranks


def _null_mask(col: Column) -> np.ndarray:
    return col.null_mask()


def _levels(values: np.ndarray, kind: ColumnKind) -> list[Any]:
    if kind is ColumnKind.NUMERIC:
        return sorted(float(v) for v in np.unique(values))
    return sorted(set(values))


def _coerce_level(level: Any, kind: ColumnKind, column: str) -> Any:
    if kind is ColumnKind.NUMERIC:
        try:
            return float(level)
        except (TypeError, ValueError):
            raise StepError(f"level {level!r} is not a value of numeric column {column!r}") from None
    if isinstance(level, bool):
        return "true" if level else "false"
    if isinstance(level, float) and level.is_integer():
        return str(int(level))
    return str(level)


def _binary(values: np.ndarray, kind: ColumnKind, column: str, chosen: Any, role: str) -> np.ndarray:
    levels = _levels(values, kind)
    if len(levels) != 2:
        raise StepError(f"{role} {column!r} must have exactly 2 levels in the working rows, found {len(levels)}")
    target = levels[1] if chosen is None else _coerce_level(chosen, kind, column)
    if target not in levels:
        raise StepError(f"{role} level {chosen!r} not among {levels} in column {column!r}")
    return values == target


def _level_label(level: Any) -> str:
    if isinstance(level, float) and level.is_integer():
        return str(int(level))
    return str(level)


def run_test(step: Test, data: Dataset, rows: np.ndarray) -> TestResult:
    fcol, ocol = data.column(step.feature), data.column(step.outcome)
    keep = rows[~(_null_mask(fcol)[rows] | _null_mask(ocol)[rows])]
    if keep.size == 0:
        raise StepError("no rows with both feature and outcome present")
    f, o = fcol.values[keep], ocol.values[keep]
    if step.test in ("welch_t", "mann_whitney"):
        fn = welch_t_test if step.test == "welch_t" else mann_whitney_u
        if len(_levels(o, ocol.kind)) == 2:
            mask = _binary(o, ocol.kind, step.outcome, step.positive, "outcome")
            measure = f
        elif ocol.kind is ColumnKind.NUMERIC and len(_levels(f, fcol.kind)) == 2:
            mask = _binary(f, fcol.kind, step.feature, step.exposed, "feature")
            measure = o
        else:
            raise StepError(f"{step.test} needs a binary outcome or a binary feature with a numeric outcome")
        measure = np.asarray(measure, dtype=float)
        try:
            return fn(measure[mask], measure[~mask])
        except ValueError as exc:
            raise StepError(str(exc)) from None
    if step.test == "two_proportion":
        exposed = _binary(f, fcol.kind, step.feature, step.exposed, "feature")
        success = _binary(o, ocol.kind, step.outcome, step.positive, "outcome")
        return two_proportion_z(
            int((success & exposed).sum()), int(exposed.sum()),
            int((success & ~exposed).sum()), int((~exposed).sum()),
        )
    if step.test == "chi_square":
        flev, olev = _levels(f, fcol.kind), _levels(o, ocol.kind)
        if len(flev) > MAX_CHI_LEVELS or len(olev) > MAX_CHI_LEVELS:
            raise StepError(f"chi_square supports at most {MAX_CHI_LEVELS} levels per column")
        fi = {v: i for i, v in enumerate(flev)}
        oi = {v: i for i, v in enumerate(olev)}
        table = np.zeros((len(flev), len(olev)), dtype=int)
        for a, b in zip(f, o):
            table[fi[float(a) if fcol.kind is ColumnKind.NUMERIC else a],
                  oi[float(b) if ocol.kind is ColumnKind.NUMERIC else b]] += 1
        try:
            return chi_square_independence(table)
        except ValueError as exc:
            raise StepError(str(exc)) from None
    raise StepError(f"unknown test {step.test!r}")


def regression_design(
    data: Dataset, rows: np.ndarray, columns: Sequence[str]
) -> tuple[dict[str, np.ndarray], list[str]]:
    """Design columns for ``columns`` over ``rows``; categorical columns
    expand to indicators named ``col[level]`` against their most frequent
    level."""
    design: dict[str, np.ndarray] = {}
    notes: list[str] = []
    for name in columns:
        col = data.column(name)
        vals = col.values[rows]
        if col.kind is ColumnKind.NUMERIC:
            v = np.asarray(vals, dtype=float)
            if np.ptp(v) == 0:
                raise StepError(f"regressor {name!r} is constant in the working rows")
            design[name] = v
            continue
        counts = Counter(vals)
        if len(counts) < 2:
            raise StepError(f"regressor {name!r} has a single level in the working rows")
        reference = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        notes.append(f"{name}: reference level {reference!r}")
        for level in sorted(counts):
            if level != reference:
                design[f"{name}[{level}]"] = (vals == level).astype(float)
    return design, notes


def run_regression(step: Regress, data: Dataset, rows: np.ndarray) -> RegressionResult:
    used = [step.outcome, *step.features, *step.controls]
    null = np.zeros(rows.size, dtype=bool)
    for name in used:
        null |= _null_mask(data.column(name))[rows]
    keep = rows[~null]
    if keep.size == 0:
        raise StepError("no complete rows for the regression")
    ocol = data.column(step.outcome)
    y = _binary(ocol.values[keep], ocol.kind, step.outcome, step.positive, "outcome").astype(float)
    design, _ = regression_design(data, keep, [*step.features, *step.controls])
    if INTERCEPT in design:
        raise StepError(f"column name {INTERCEPT!r} is reserved")
    try:
        return logistic_regression(design, y)
    except SingularInformationError as exc:
        raise StepError(f"{exc}; drop redundant controls") from None
    except ValueError as exc:
        raise StepError(str(exc)) from None


def apply_filter(step: Filter, data: Dataset, rows: np.ndarray) -> np.ndarray:
    col = data.column(step.column)
    vals = col.values[rows]
    present = ~_null_mask(col)[rows]
    if isinstance(step.value, str):
        eq = np.array([v == step.value for v in vals], dtype=bool)
        keep = present & (eq if step.op == "==" else ~eq)
        return rows[keep]
    x = np.asarray(vals, dtype=float)
    if step.quantile is not None:
        if not present.any():
            raise StepError(f"column {step.column!r} has no values to take a quantile of")
        threshold = float(np.quantile(x[present], step.quantile))
    else:
        threshold = float(step.value)
    ops: dict[str, Callable[[np.ndarray, float], np.ndarray]] = {
        "<": np.less, "<=": np.less_equal, ">": np.greater,
        ">=": np.greater_equal, "==": np.equal, "!=": np.not_equal,
    }
    with np.errstate(invalid="ignore"):
        keep = present & ops[step.op](x, threshold)
    return rows[keep]


# --------------------------------------------------------------------------- session


class ExperimentSession:
    """Executes plans against one dataset, keeping created columns.

    Columns made by any plan stay visible to later plans. Filters narrow
    the working rows only for the remainder of the plan they belong to.
    Steps are numbered globally (1-based) across all plans of the session.
    """

    def __init__(
        self,
        dataset: Dataset,
        annotator: Annotator | None = None,
        budget: Budget | None = None,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.dataset = dataset
        self.annotator = annotator
        self.budget = budget or Budget()
        self.clock = clock
        self.steps_run = 0
        self.created: dict[str, PlanStep] = {}

    def _is_repeat(self, step: PlanStep) -> bool:
        target = creates(step)
        return target is not None and self.created.get(target) == step

    def validate(self, plan: Sequence[PlanStep]) -> list[str]:
        schema = self.dataset.schema()
        errors: list[str] = []
        for i, step in enumerate(plan, start=1):
            if self._is_repeat(step):
                continue
            errors += step_errors(step, schema, f"step {i}")
            target = creates(step)
            if target is not None and target not in schema:
                schema[target] = created_kind(step)
        return errors

    def run(self, plan: Sequence[PlanStep]) -> PlanOutcome:
        errors = self.validate(plan)
        if errors:
            raise PlanValidationError(errors)
        base = self.steps_run
        self.steps_run += len(plan)
        outcome = PlanOutcome(step_numbers=tuple(range(base + 1, base + len(plan) + 1)))
        rows = np.arange(self.dataset.row_count)
        outcome.rows_remaining = rows.size
        for offset, step in enumerate(plan):
            number = base + offset + 1
            if offset >= self.budget.max_steps:
                raise PlanExecutionError(number, f"plan exceeds the {self.budget.max_steps}-step budget", outcome)
            if self._is_repeat(step):
                outcome.warnings.append(f"step {number}: column {creates(step)!r} already computed; reused")
                continue
            if creates(step) is not None and len(self.created) >= self.budget.max_created_columns:
                raise PlanExecutionError(
                    number, f"column budget exceeded ({self.budget.max_created_columns} created columns)", outcome
                )
            started = self.clock()
            try:
                rows = self._run_step(step, number, rows, outcome)
            except StepError as exc:
                raise PlanExecutionError(number, str(exc), outcome) from None
            elapsed = self.clock() - started
            if elapsed > self.budget.per_step_time_limit:
                raise StepTimeoutError(
                    number,
                    f"step took {elapsed:.1f}s, over the {self.budget.per_step_time_limit:g}s limit",
                    outcome,
                )
            outcome.rows_remaining = int(rows.size)
        return outcome

    def _add_column(self, step: PlanStep, kind: ColumnKind, values: Sequence[Any], outcome: PlanOutcome) -> None:
        name = creates(step)
        self.dataset = augment_column(self.dataset, name, kind, values)
        self.created[name] = step
        outcome.created_columns.append(name)

    def _run_step(self, step: PlanStep, number: int, rows: np.ndarray, outcome: PlanOutcome) -> np.ndarray:
        if isinstance(step, Featurize):
            spec = step.spec
            if spec.mode == "programmatic":
                values = builtin_featurize(spec.featurizer, spec.params, self.dataset, spec.source_columns)
                self._add_column(step, ColumnKind.NUMERIC, values, outcome)
            else:
                if self.annotator is None:
                    raise StepError("llm features need an annotator")
                try:
                    result = self.annotator.annotate(AnnotationJob(spec), self.dataset)
                except Exception as exc:  # annotation failures carry their own detail
                    raise StepError(f"annotation of {spec.name!r} failed: {exc}") from exc
                outcome.warnings += [f"step {number}: {w}" for w in result.warnings]
                self._add_column(step, ColumnKind.CATEGORICAL, list(result.labels), outcome)
        elif isinstance(step, Derive):
            expr = Expression(step.expression)
            cols = {c: self.dataset[c] for c in expr.columns}
            values = expr.evaluate(cols, self.dataset.row_count)
            self._add_column(step, ColumnKind.NUMERIC, values, outcome)
        elif isinstance(step, GroupRank):
            ranks = group_rank(self.dataset, step.group_key, step.order_by, step.direction)
            self._add_column(step, ColumnKind.NUMERIC, ranks.astype(float), outcome)
        elif isinstance(step, Filter):
            kept = apply_filter(step, self.dataset, rows)
            if kept.size == 0:
                raise StepError(f"filter {step_to_dict(step)} leaves no rows")
            return kept
        elif isinstance(step, Test):
            result = run_test(step, self.dataset, rows)
            outcome.test_results.append((number, result))
            outcome.warnings += [f"step {number}: {w}" for w in result.warnings]
        elif isinstance(step, Regress):
            result = run_regression(step, self.dataset, rows)
            outcome.regression_results.append((number, result))
            outcome.warnings += [f"step {number}: {w}" for w in result.warnings]
        return rows


def execute_plan(
    plan: Sequence[PlanStep],
    dataset: Dataset,
    annotator: Annotator | None = None,
    budget: Budget | None = None,
) -> PlanOutcome:
    """Validate, then run ``plan`` in a fresh session over ``dataset``."""
    return ExperimentSession(dataset, annotator, budget).run(plan)
