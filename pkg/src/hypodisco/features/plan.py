"""Experiment plan steps, their serialization, and static validation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence, Union

from ..dataset import ColumnKind
from .expr import Expression, ExpressionError
from .featurizers import FEATURIZERS, source_kind_ok
from .spec import IDENTIFIER_RE, FeatureSpec, FeatureSpecError

PLAN_FORMAT_VERSION = 1

TEST_ALIASES = {
    "welch_t": "welch_t",
    "welch_t_test": "welch_t",
    "t_test": "welch_t",
    "mann_whitney": "mann_whitney",
    "mann_whitney_u": "mann_whitney",
    "chi_square": "chi_square",
    "chi_square_independence": "chi_square",
    "two_proportion": "two_proportion",
    "two_proportion_z": "two_proportion",
}
FILTER_OPS = ("<", "<=", ">", ">=", "==", "!=")
_GROUPABLE = (ColumnKind.NUMERIC, ColumnKind.CATEGORICAL)


class PlanFormatError(ValueError):
    """A serialized plan or step cannot be decoded."""


@dataclass(frozen=True)
class Featurize:
    spec: FeatureSpec

    @property
    def target(self) -> str:
        return self.spec.name


@dataclass(frozen=True)
class Derive:
    target: str
    expression: str


@dataclass(frozen=True)
class GroupRank:
    target: str
    group_key: str
    order_by: str
    direction: str = "ascending"


@dataclass(frozen=True)
class Filter:
    """Keep rows where ``column op value``; ``quantile`` replaces ``value``
    by that quantile of the column over the current working rows."""

    column: str
    op: str
    value: float | str | None = None
    quantile: float | None = None


@dataclass(frozen=True)
class Test:
    """Two-group or contingency test of ``feature`` against ``outcome``.

    ``positive`` names the outcome level treated as success / group a;
    ``exposed`` names the feature level forming group 1 of a
    two-proportion test. Both default to the larger of two sorted levels.
    """

    __test__ = False

    test: str
    feature: str
    outcome: str
    positive: float | str | None = None
    exposed: float | str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "test", TEST_ALIASES.get(self.test, self.test))


@dataclass(frozen=True)
class Regress:
    """Logistic regression of a binary outcome on features plus controls;
    categorical regressors enter as indicator (fixed-effect) columns."""

    outcome: str
    features: tuple[str, ...]
    controls: tuple[str, ...] = ()
    positive: float | str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "controls", tuple(self.controls))


PlanStep = Union[Featurize, Derive, GroupRank, Filter, Test, Regress]
_STEP_TYPES = {"featurize": Featurize, "derive": Derive, "group_rank": GroupRank,
               "filter": Filter, "test": Test, "regress": Regress}


def creates(step: PlanStep) -> str | None:
    if isinstance(step, (Featurize, Derive, GroupRank)):
        return step.target
    return None


def created_kind(step: PlanStep) -> ColumnKind:
    if isinstance(step, Featurize) and step.spec.mode == "llm":
        return ColumnKind.CATEGORICAL
    return ColumnKind.NUMERIC


# --------------------------------------------------------------------------- serialization


def step_to_dict(step: PlanStep) -> dict[str, Any]:
    if isinstance(step, Featurize):
        return {"op": "featurize", "spec": step.spec.to_dict()}
    if isinstance(step, Derive):
        return {"op": "derive", "target": step.target, "expression": step.expression}
    if isinstance(step, GroupRank):
        return {"op": "group_rank", "target": step.target, "group_key": step.group_key,
                "order_by": step.order_by, "direction": step.direction}
    if isinstance(step, Filter):
        out: dict[str, Any] = {"op": "filter", "column": step.column, "comparison": step.op}
        if step.quantile is not None:
            out["quantile"] = step.quantile
        else:
            out["value"] = step.value
        return out
    if isinstance(step, Test):
        out = {"op": "test", "test": step.test, "feature": step.feature, "outcome": step.outcome}
        if step.positive is not None:
            out["positive"] = step.positive
        if step.exposed is not None:
            out["exposed"] = step.exposed
        return out
    if isinstance(step, Regress):
        out = {"op": "regress", "outcome": step.outcome, "features": list(step.features),
               "controls": list(step.controls)}
        if step.positive is not None:
            out["positive"] = step.positive
        return out
    raise TypeError(f"not a plan step: {step!r}")


def step_from_dict(data: Mapping[str, Any]) -> PlanStep:
    if not isinstance(data, Mapping):
        raise PlanFormatError(f"a step must be an object, got {type(data).__name__}")
    op = data.get("op")
    if op not in _STEP_TYPES:
        raise PlanFormatError(f"unknown step op {op!r}; expected one of {sorted(_STEP_TYPES)}")
    try:
        if op == "featurize":
            spec = data.get("spec")
            if not isinstance(spec, Mapping):
                raise PlanFormatError("featurize step needs a 'spec' object")
            return Featurize(FeatureSpec.from_dict(dict(spec)))
        if op == "derive":
            return Derive(target=data["target"], expression=data["expression"])
        if op == "group_rank":
            return GroupRank(target=data["target"], group_key=data["group_key"],
                             order_by=data["order_by"], direction=data.get("direction", "ascending"))
        if op == "filter":
            symbol = data["comparison"]
            return Filter(column=data["column"], op=symbol, value=data.get("value"),
                          quantile=data.get("quantile"))
        if op == "test":
            return Test(test=data["test"], feature=data["feature"], outcome=data["outcome"],
                        positive=data.get("positive"), exposed=data.get("exposed"))
        return Regress(outcome=data["outcome"], features=tuple(data.get("features", ())),
                       controls=tuple(data.get("controls", ())), positive=data.get("positive"))
    except KeyError as exc:
        raise PlanFormatError(f"{op} step missing field {exc.args[0]!r}") from None
    except FeatureSpecError as exc:
        raise PlanFormatError(str(exc)) from None


def plan_to_jsonl(plan: Iterable[PlanStep]) -> str:
    lines = [json.dumps({"version": PLAN_FORMAT_VERSION}, sort_keys=True)]
    lines += [json.dumps(step_to_dict(s), sort_keys=True) for s in plan]
    return "\n".join(lines) + "\n"


def plan_from_jsonl(text: str) -> list[PlanStep]:
    """Decode one step object per line; a leading version record is optional."""
    steps: list[PlanStep] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PlanFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if isinstance(obj, Mapping) and "version" in obj and "op" not in obj:
            if obj["version"] != PLAN_FORMAT_VERSION:
                raise PlanFormatError(f"unsupported plan version {obj['version']!r}")
            continue
        try:
            steps.append(step_from_dict(obj))
        except PlanFormatError as exc:
            raise PlanFormatError(f"line {lineno}: {exc}") from None
    return steps


# --------------------------------------------------------------------------- validation


def _need(schema: Mapping[str, ColumnKind], col: str, where: str, errors: list[str]) -> ColumnKind | None:
    if col not in schema:
        errors.append(f"{where}: unknown column {col!r}")
        return None
    return schema[col]


def step_errors(step: PlanStep, schema: Mapping[str, ColumnKind], where: str) -> list[str]:
    """Problems with one step given the columns available before it."""
    errors: list[str] = []
    target = creates(step)
    if target is not None:
        if not IDENTIFIER_RE.match(target):
            errors.append(f"{where}: target name {target!r} must be an identifier")
        elif target in schema:
            errors.append(f"{where}: column {target!r} already exists")

    if isinstance(step, Featurize):
        spec = step.spec
        for col in spec.source_columns:
            kind = _need(schema, col, where, errors)
            if kind is None:
                continue
            if spec.mode == "llm":
                if kind not in (ColumnKind.TEXT, ColumnKind.IMAGE_PATH, ColumnKind.CATEGORICAL):
                    errors.append(f"{where}: llm feature needs a text or image column; {col!r} is {kind.value}")
            elif not source_kind_ok(spec.featurizer, kind):
                need = FEATURIZERS[spec.featurizer].source_kind
                errors.append(f"{where}: {spec.featurizer} needs {need} input; {col!r} is {kind.value}")
    elif isinstance(step, Derive):
        try:
            expr = Expression(step.expression)
        except ExpressionError as exc:
            errors.append(f"{where}: {exc}")
        else:
            errors += [f"{where}: {e}" for e in expr.type_errors(schema)]
    elif isinstance(step, GroupRank):
        _need(schema, step.group_key, where, errors)
        kind = _need(schema, step.order_by, where, errors)
        if kind is not None and not kind.is_orderable:
            errors.append(f"{where}: cannot order by {step.order_by!r} ({kind.value}); need numeric or timestamp")
        if step.direction not in ("ascending", "descending"):
            errors.append(f"{where}: direction must be ascending or descending")
    elif isinstance(step, Filter):
        kind = _need(schema, step.column, where, errors)
        if step.op not in FILTER_OPS:
            errors.append(f"{where}: filter operator must be one of {list(FILTER_OPS)}, got {step.op!r}")
        if (step.value is None) == (step.quantile is None):
            errors.append(f"{where}: filter needs exactly one of value or quantile")
        if step.quantile is not None:
            if not isinstance(step.quantile, (int, float)) or not 0.0 <= step.quantile <= 1.0:
                errors.append(f"{where}: quantile must lie in [0, 1]")
            if kind is not None and not kind.is_orderable:
                errors.append(f"{where}: quantile filter needs a numeric or timestamp column")
        if kind is not None and step.value is not None:
            if isinstance(step.value, str):
                if kind is not ColumnKind.CATEGORICAL or step.op not in ("==", "!="):
                    errors.append(f"{where}: string values only compare to categorical columns with == or !=")
            elif isinstance(step.value, bool) or not isinstance(step.value, (int, float)):
                errors.append(f"{where}: filter value must be a number or string")
            elif not kind.is_orderable:
                errors.append(f"{where}: numeric comparison on {kind.value} column {step.column!r}")
    elif isinstance(step, Test):
        if step.test not in set(TEST_ALIASES.values()):
            errors.append(f"{where}: unknown test {step.test!r}")
        fkind = _need(schema, step.feature, where, errors)
        okind = _need(schema, step.outcome, where, errors)
        if step.feature == step.outcome:
            errors.append(f"{where}: feature and outcome are the same column")
        if step.test in ("welch_t", "mann_whitney"):
            if fkind is not None and fkind is not ColumnKind.NUMERIC:
                errors.append(f"{where}: {step.test} needs a numeric feature; {step.feature!r} is a non-numeric feature ({fkind.value})")
            if okind is not None and okind not in _GROUPABLE:
                errors.append(f"{where}: outcome {step.outcome!r} must be numeric or categorical")
        elif step.test in ("chi_square", "two_proportion"):
            for col, kind in ((step.feature, fkind), (step.outcome, okind)):
                if kind is not None and kind not in _GROUPABLE:
                    errors.append(f"{where}: {step.test} needs categorical or numeric columns; {col!r} is {kind.value}")
    elif isinstance(step, Regress):
        okind = _need(schema, step.outcome, where, errors)
        if okind is not None and okind not in _GROUPABLE:
            errors.append(f"{where}: outcome {step.outcome!r} must be binary numeric or categorical")
        if not step.features:
            errors.append(f"{where}: regress needs at least one feature")
        used = [*step.features, *step.controls]
        if len(set(used)) != len(used) or step.outcome in used:
            errors.append(f"{where}: regressors must be distinct and exclude the outcome")
        for col in used:
            kind = _need(schema, col, where, errors)
            if kind is not None and kind not in _GROUPABLE:
                errors.append(f"{where}: regressor {col!r} is {kind.value}; need numeric or categorical")
    else:
        errors.append(f"{where}: not a plan step: {step!r}")
    return errors


def validate_plan(plan: Sequence[PlanStep], schema: Mapping[str, ColumnKind]) -> list[str]:
    """All static errors in ``plan``; an empty list means the plan is valid.

    Column creation is simulated step by step, so a reference to a column
    made only by a later step is reported.
    """
    current = dict(schema)
    errors: list[str] = []
    for i, step in enumerate(plan, start=1):
        errs = step_errors(step, current, f"step {i}")
        errors += errs
        target = creates(step)
        if target is not None and target not in current:
            current[target] = created_kind(step)
    return errors
