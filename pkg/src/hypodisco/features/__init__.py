"""Typed experiment plans: featurizers, derived columns, filters, tests."""

from .executor import (
    Budget,
    ExperimentSession,
    PlanExecutionError,
    PlanOutcome,
    PlanValidationError,
    StepTimeoutError,
    execute_plan,
    group_rank,
)
from .expr import Expression, ExpressionError
from .featurizers import FEATURIZERS, builtin_featurize, count_syllables, flesch_kincaid_grade
from .plan import (
    PLAN_FORMAT_VERSION,
    Derive,
    Featurize,
    Filter,
    GroupRank,
    PlanFormatError,
    PlanStep,
    Regress,
    Test,
    plan_from_jsonl,
    plan_to_jsonl,
    step_from_dict,
    step_to_dict,
    validate_plan,
)
from .spec import AnnotationJob, FeatureSpec, FeatureSpecError

__all__ = [
    "AnnotationJob",
    "Budget",
    "Derive",
    "ExperimentSession",
    "Expression",
    "ExpressionError",
    "FEATURIZERS",
    "Featurize",
    "FeatureSpec",
    "FeatureSpecError",
    "Filter",
    "GroupRank",
    "PLAN_FORMAT_VERSION",
    "PlanExecutionError",
    "PlanFormatError",
    "PlanOutcome",
    "PlanStep",
    "PlanValidationError",
    "Regress",
    "StepTimeoutError",
    "Test",
    "builtin_featurize",
    "count_syllables",
    "execute_plan",
    "flesch_kincaid_grade",
    "group_rank",
    "plan_from_jsonl",
    "plan_to_jsonl",
    "step_from_dict",
    "step_to_dict",
    "validate_plan",
]
