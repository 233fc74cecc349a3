"""Applying a hypothesis bank to new data and scoring it.

Two predictors are offered: a logistic regression over bank-derived
features, and a two-call LLM procedure that first picks the k most
relevant hypotheses and then labels the example with only those.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .agents.report import term_column
from .annotator import parse_label
from .dataset import ColumnKind, Dataset, render_row
from .features import (
    Derive,
    ExperimentSession,
    Expression,
    Featurize,
    GroupRank,
    PlanExecutionError,
    PlanStep,
    PlanValidationError,
)
from .llm import ChatExchange, Message
from .prompting import render
from .search import HypothesisBank, HypothesisRecord
from .stats import (
    INTERCEPT,
    EffectSize,
    RegressionResult,
    SingularInformationError,
    describe_effect,
    logistic_regression,
)
from .stats.logistic import _expit

logger = logging.getLogger(__name__)

RIDGE_RETRY = 1e-6


class InferenceError(RuntimeError):
    pass


def binary_outcome(values: Sequence[Any], positive: Any = None) -> tuple[np.ndarray, Any]:
    """Map a two-level outcome to 0/1. Without ``positive`` the larger sorted level is 1."""
    present = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    levels = sorted(set(present), key=lambda v: (str(type(v)), v))
    if len(levels) != 2:
        raise InferenceError(f"outcome must have exactly 2 levels, found {levels[:5]}")
    positive = levels[1] if positive is None else positive
    if positive not in levels:
        raise InferenceError(f"positive label {positive!r} is not an outcome level ({levels})")
    return np.array([1.0 if v == positive else 0.0 for v in values]), positive


# --------------------------------------------------------------------------- featurization


@dataclass
class FeatureMatrix:
    """Hypothesis-derived columns aligned to dataset rows; NaN marks missing."""

    names: list[str]
    values: np.ndarray
    kinds: list[str]
    sources: list[str]
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).reshape(-1, len(self.names))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select(self, names: Sequence[str]) -> FeatureMatrix:
        idx = [self.names.index(n) for n in names]
        return FeatureMatrix(list(names), self.values[:, idx], [self.kinds[i] for i in idx],
                             [self.sources[i] for i in idx], list(self.warnings))


def _step_inputs(step: PlanStep) -> list[str]:
    if isinstance(step, Featurize):
        return list(step.spec.source_columns)
    if isinstance(step, Derive):
        return sorted(Expression(step.expression).columns)
    if isinstance(step, GroupRank):
        return [step.group_key, step.order_by]
    return []


def dependency_closure(record: HypothesisRecord) -> tuple[list[PlanStep], set[str]]:
    """Creating steps the headline feature depends on, in execution order,
    plus the base columns they read."""
    report = record.report
    feature = report.headline_feature
    if feature is None:
        raise InferenceError(f"{record.id} has no headline feature")
    limit = report.headline_step if report.headline_step is not None else math.inf
    makers: dict[str, tuple[int, PlanStep]] = {}
    for number, step in report.plan:
        if number < limit and isinstance(step, (Featurize, Derive, GroupRank)):
            makers.setdefault(step.target, (number, step))
    needed: dict[int, PlanStep] = {}
    base: set[str] = set()
    stack = [feature]
    seen: set[str] = set()
    while stack:
        name = stack.pop()
        if name in seen:
            continue
        seen.add(name)
        if name in makers:
            number, step = makers[name]
            needed[number] = step
            stack += _step_inputs(step)
        else:
            base.add(name)
    return [needed[k] for k in sorted(needed)], base


class BankFeaturizer:
    """Rebuilds each banked hypothesis's headline feature on any dataset.

    ``fit`` fixes the column layout (indicator levels for categorical
    features); ``transform`` recomputes the features. The outcome column
    is removed before any step runs, so labels are never read.
    """

    def __init__(self, bank: HypothesisBank | Sequence[HypothesisRecord], annotator=None):
        self.records = list(bank)
        self.annotator = annotator

    def _raw(self, dataset: Dataset) -> tuple[dict[str, tuple[ColumnKind, np.ndarray]], list[str]]:
        blind = dataset.without_outcome_values()
        out: dict[str, tuple[ColumnKind, np.ndarray]] = {}
        warnings: list[str] = []
        for rec in self.records:
            try:
                steps, base = dependency_closure(rec)
            except InferenceError as exc:
                warnings.append(str(exc))
                continue
            missing = sorted(c for c in base if c not in blind)
            if missing:
                warnings.append(f"{rec.id}: dataset lacks column(s) {missing}; hypothesis omitted")
                continue
            session = ExperimentSession(blind, self.annotator)
            try:
                if steps:
                    session.run(steps)
            except (PlanValidationError, PlanExecutionError) as exc:
                warnings.append(f"{rec.id}: could not rebuild feature ({exc}); hypothesis omitted")
                continue
            col = session.dataset.column(rec.report.headline_feature)
            out[rec.id] = (col.kind, col.values)
        for w in warnings:
            logger.warning("featurize_by_bank: %s", w)
        return out, warnings

    def fit(self, dataset: Dataset) -> BankFeaturizer:
        raw, _ = self._raw(dataset)
        self.layout_: dict[str, list[Any] | None] = {}
        for rid, (kind, values) in raw.items():
            if kind is ColumnKind.NUMERIC:
                self.layout_[rid] = None
                continue
            counts = Counter(v for v in values if v is not None)
            if len(counts) < 2:
                self.layout_[rid] = []
                continue
            reference = sorted(counts.items(), key=lambda kv: (-kv[1], str(kv[0])))[0][0]
            self.layout_[rid] = [lev for lev in sorted(counts, key=str) if lev != reference]
        return self

    def transform(self, dataset: Dataset) -> FeatureMatrix:
        if not hasattr(self, "layout_"):
            raise InferenceError("BankFeaturizer is not fitted")
        raw, warnings = self._raw(dataset)
        names: list[str] = []
        cols: list[np.ndarray] = []
        kinds: list[str] = []
        sources: list[str] = []
        for rec in self.records:
            if rec.id not in self.layout_ or rec.id not in raw:
                continue
            kind, values = raw[rec.id]
            levels = self.layout_[rec.id]
            if levels is None:
                if kind is not ColumnKind.NUMERIC:
                    warnings.append(f"{rec.id}: feature kind changed to {kind.value}; hypothesis omitted")
                    continue
                v = np.asarray(values, dtype=float)
                finite = v[~np.isnan(v)]
                names.append(rec.id)
                cols.append(v)
                kinds.append("binary" if np.isin(finite, (0.0, 1.0)).all() else "real")
                sources.append(rec.id)
                continue
            if not levels:
                warnings.append(f"{rec.id}: feature had a single level when fitted; hypothesis omitted")
                continue
            for lev in levels:
                names.append(f"{rec.id}[{lev}]")
                cols.append(np.array([math.nan if v is None else float(v == lev) for v in values]))
                kinds.append("binary")
                sources.append(rec.id)
        values = np.column_stack(cols) if cols else np.empty((dataset.row_count, 0))
        return FeatureMatrix(names, values, kinds, sources, warnings)

    def fit_transform(self, dataset: Dataset) -> FeatureMatrix:
        return self.fit(dataset).transform(dataset)


def featurize_by_bank(dataset: Dataset, bank: HypothesisBank, annotator=None, fit_on: Dataset | None = None) -> FeatureMatrix:
    return BankFeaturizer(bank, annotator).fit(fit_on if fit_on is not None else dataset).transform(dataset)


# --------------------------------------------------------------------------- regression inference


def _impute(train: np.ndarray, test: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    means = np.array([np.nanmean(c) if np.isfinite(c).any() else 0.0 for c in train.T])
    fill = lambda m: np.where(np.isnan(m), means[None, :], m)  # noqa: E731
    return fill(train), (fill(test) if test is not None else None), means


def _fit(x: np.ndarray, y: np.ndarray, names: Sequence[str]) -> RegressionResult:
    try:
        fit = logistic_regression(x, y, names=names)
        if fit.converged:
            return fit
        logger.warning("regression_infer: %s; retrying with ridge %g", "; ".join(fit.warnings), RIDGE_RETRY)
        fit = logistic_regression(x, y, names=names, ridge_penalty=RIDGE_RETRY, max_iterations=500)
    except SingularInformationError as exc:
        raise InferenceError(f"logistic fit failed: {exc}") from None
    if not fit.converged:
        raise InferenceError(f"logistic fit failed even with ridge {RIDGE_RETRY}: {'; '.join(fit.warnings)}")
    return fit


def _linear(fit: RegressionResult, x: np.ndarray, names: Sequence[str]) -> np.ndarray:
    beta = np.array([fit.coefficients[n].beta for n in names])
    return fit.coefficients[INTERCEPT].beta + x @ beta


@dataclass(frozen=True)
class RegressionPrediction:
    predictions: np.ndarray
    probabilities: np.ndarray
    fit: RegressionResult
    accuracy: float | None = None


def regression_infer(
    train: FeatureMatrix, y_train: Sequence[float], test: FeatureMatrix, y_test: Sequence[float] | None = None
) -> RegressionPrediction:
    """Fit on ``train`` (missing values set to training means), predict ``test`` at p >= 0.5."""
    if train.names != test.names:
        raise InferenceError("train and test matrices have different columns")
    y = np.asarray(y_train, dtype=float)
    if train.shape[1] == 0:
        raise InferenceError("no hypothesis features to fit")
    xtr, xte, _ = _impute(train.values, test.values)
    fit = _fit(xtr, y, train.names)
    prob = _expit(_linear(fit, xte, train.names))
    pred = (prob >= 0.5).astype(int)
    acc = float(np.mean(pred == np.asarray(y_test, dtype=float))) if y_test is not None else None
    return RegressionPrediction(pred, prob, fit, acc)


class BankRegressionClassifier:
    """Estimator-style pairing of BankFeaturizer and logistic regression."""

    def __init__(self, bank: HypothesisBank, annotator=None, positive: Any = None):
        self.bank = bank
        self.annotator = annotator
        self.positive = positive

    def fit(self, dataset: Dataset) -> BankRegressionClassifier:
        y, self.positive_ = binary_outcome(list(dataset[dataset.outcome_column]), self.positive)
        self.featurizer_ = BankFeaturizer(self.bank, self.annotator).fit(dataset)
        self.train_ = self.featurizer_.transform(dataset)
        xtr, _, self.means_ = _impute(self.train_.values)
        self.fit_ = _fit(xtr, y, self.train_.names)
        return self

    def predict_proba(self, dataset: Dataset) -> np.ndarray:
        x = self.featurizer_.transform(dataset)
        if x.names != self.train_.names:
            raise InferenceError("feature columns differ from the fitted layout")
        v = np.where(np.isnan(x.values), self.means_[None, :], x.values)
        return _expit(_linear(self.fit_, v, x.names))

    def predict(self, dataset: Dataset) -> np.ndarray:
        return (self.predict_proba(dataset) >= 0.5).astype(int)

    def score(self, dataset: Dataset) -> float:
        y, _ = binary_outcome(list(dataset[dataset.outcome_column]), self.positive_)
        return float(np.mean(self.predict(dataset) == y))


def prediction_errors(bank: HypothesisBank, dataset: Dataset, annotator=None) -> np.ndarray:
    """|y - p| per row under a regression on the bank's features; uniform if the fit fails."""
    try:
        model = BankRegressionClassifier(bank, annotator).fit(dataset)
        y, _ = binary_outcome(list(dataset[dataset.outcome_column]), model.positive_)
        return np.abs(y - model.predict_proba(dataset))
    except InferenceError as exc:
        logger.warning("boosting weights unavailable (%s); sampling uniformly", exc)
        return np.ones(dataset.row_count)


# --------------------------------------------------------------------------- significance counting


@dataclass(frozen=True)
class SignificanceReport:
    count: int
    divisor: int
    alpha: float
    p_values: dict[str, float]
    coefficients: dict[str, float]
    dropped: dict[str, str]
    warnings: tuple[str, ...] = ()

    @property
    def threshold(self) -> float:
        return self.alpha / self.divisor

    @property
    def significant(self) -> list[str]:
        return [n for n, p in self.p_values.items() if p < self.threshold]

    def to_dict(self) -> dict[str, Any]:
        return {
            "count": self.count, "divisor": self.divisor, "alpha": self.alpha,
            "p_values": self.p_values, "coefficients": self.coefficients,
            "dropped": self.dropped, "warnings": list(self.warnings),
        }


def drop_redundant(matrix: np.ndarray, names: Sequence[str]) -> tuple[list[int], dict[str, str], list[str]]:
    """Keep columns that are non-constant and add rank beyond the intercept
    and the earlier kept columns."""
    kept: list[int] = []
    dropped: dict[str, str] = {}
    warnings: list[str] = []
    basis = np.ones((matrix.shape[0], 1))
    for k, name in enumerate(names):
        col = matrix[:, k]
        if np.ptp(col) == 0:
            dropped[name] = "constant"
            warnings.append(f"{name}: constant column dropped")
            continue
        cand = np.column_stack([basis, col])
        tol = max(cand.shape) * np.finfo(float).eps * np.linalg.norm(cand, 2) * 1e3
        if np.linalg.matrix_rank(cand, tol=tol) < cand.shape[1]:
            dropped[name] = "collinear"
            warnings.append(f"{name}: collinear with earlier columns; dropped")
            continue
        basis = cand
        kept.append(k)
    return kept, dropped, warnings


def count_significant(features: FeatureMatrix, outcome: Sequence[float], alpha: float = 0.05) -> SignificanceReport:
    """One multivariate logistic fit; a column counts when its Wald p < alpha / m."""
    y = np.asarray(outcome, dtype=float)
    x, _, _ = _impute(features.values)
    kept, dropped, warnings = drop_redundant(x, features.names)
    for w in warnings:
        logger.warning("count_significant: %s", w)
    if not kept:
        raise InferenceError("no usable feature columns after dropping constant and collinear ones")
    names = [features.names[k] for k in kept]
    try:
        fit = _fit(x[:, kept], y, names)
    except InferenceError as exc:
        raise InferenceError(f"{exc} (columns {names}, n={y.size}, positives={int(y.sum())})") from None
    m = len(names)
    p_values = {n: fit.coefficients[n].p for n in names}
    count = sum(p < alpha / m for p in p_values.values())
    return SignificanceReport(
        count=count, divisor=m, alpha=alpha, p_values=p_values,
        coefficients={n: fit.coefficients[n].beta for n in names}, dropped=dropped,
        warnings=tuple(warnings) + tuple(fit.warnings),
    )


# --------------------------------------------------------------------------- two-step LLM inference


def parse_selection(response: str, bank_size: int, k: int) -> list[int] | None:
    """1-based indices in reply order, deduplicated and capped at k; None if none are valid."""
    picked: list[int] = []
    for tok in re.findall(r"\d+", response):
        idx = int(tok)
        if 1 <= idx <= bank_size and idx not in picked:
            picked.append(idx)
    return picked[:k] or None


@dataclass(frozen=True)
class TwoStepPrediction:
    label: str
    selected: tuple[int, ...]
    fallback: bool
    calls: int


def two_step_infer(
    example: str,
    hypotheses: Sequence[str],
    gateway,
    labels: Sequence[str],
    task_description: str = "",
    k: int = 3,
    model: str = "inference",
) -> TwoStepPrediction:
    """Select the k most relevant hypotheses, then predict with only those."""
    if not hypotheses:
        raise InferenceError("two-step inference needs a non-empty bank")
    system = Message("system", render("infer_system", task_description=task_description))
    calls = 0
    fallback = False
    if len(hypotheses) <= k:
        selected = list(range(1, len(hypotheses) + 1))
    else:
        ask = ChatExchange((system, Message("user", render("infer_select", hypotheses=list(hypotheses),
                                                           example=example, k=k))),
                           model=model, temperature=0.0, max_output_tokens=64)
        reply = gateway.complete(ask).text
        calls += 1
        parsed = parse_selection(reply, len(hypotheses), k)
        if parsed is None:
            logger.warning("two_step_infer: unparseable selection %r; using the first %d hypotheses", reply[:80], k)
            parsed, fallback = list(range(1, k + 1)), True
        selected = parsed
    chosen = [hypotheses[i - 1] for i in selected]
    ask = ChatExchange((system, Message("user", render("infer_predict", hypotheses=chosen, example=example,
                                                       labels=list(labels)))),
                       model=model, temperature=0.0, max_output_tokens=32)
    reply = gateway.complete(ask).text
    calls += 1
    label = parse_label(reply, labels)
    if label is None:
        raise InferenceError(f"unparseable label {reply[:80]!r}; expected one of {list(labels)}")
    return TwoStepPrediction(label, tuple(selected), fallback, calls)


def two_step_predict_dataset(
    dataset: Dataset,
    bank: HypothesisBank,
    gateway,
    labels: Sequence[str],
    task_description: str = "",
    k: int = 3,
    max_workers: int = 8,
) -> list[TwoStepPrediction | InferenceError]:
    """Two-step predictions for every row; per-row failures are returned, not raised."""
    exclude = [dataset.outcome_column] if dataset.outcome_column else []
    texts = bank.texts

    def one(r: int) -> TwoStepPrediction | InferenceError:
        try:
            return two_step_infer(render_row(dataset, r, exclude), texts, gateway, labels, task_description, k)
        except InferenceError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(one, range(dataset.row_count)))


# --------------------------------------------------------------------------- evaluation report


@dataclass(frozen=True)
class HypothesisRow:
    id: str
    text: str
    column: str
    p: float
    odds_ratio: float
    magnitude: str
    significant: bool


@dataclass(frozen=True)
class EvaluationReport:
    total_hypotheses: int
    tested_columns: int
    significant_count: int
    alpha: float
    rows: tuple[HypothesisRow, ...]
    omitted: tuple[str, ...] = ()
    accuracy: float | None = None
    method: str | None = None
    warnings: tuple[str, ...] = ()

    @property
    def divisor(self) -> int:
        return self.tested_columns

    def to_dict(self) -> dict[str, Any]:
        return {
            "total_hypotheses": self.total_hypotheses,
            "tested_columns": self.tested_columns,
            "bonferroni_divisor": self.divisor,
            "significant_count": self.significant_count,
            "alpha": self.alpha,
            "accuracy": self.accuracy,
            "method": self.method,
            "rows": [r.__dict__ for r in self.rows],
            "omitted": list(self.omitted),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_markdown(self) -> str:
        lines = ["# Evaluation", ""]
        if self.accuracy is not None:
            lines.append(f"- Accuracy ({self.method}): {self.accuracy:.4f}")
        lines += [
            f"- Hypotheses in bank: {self.total_hypotheses}",
            f"- Columns tested: {self.tested_columns}",
            f"- Bonferroni threshold: {self.alpha:g} / {self.divisor} = {self.alpha / max(self.divisor, 1):.4g}",
            f"- Significant: {self.significant_count}",
            "",
            "| id | column | p | odds ratio | magnitude | significant | hypothesis |",
            "|---|---|---|---|---|---|---|",
        ]
        for r in self.rows:
            text = r.text.replace("|", "\\|")
            lines.append(f"| {r.id} | {r.column} | {r.p:.4g} | {r.odds_ratio:.3g} | {r.magnitude} | "
                         f"{'yes' if r.significant else 'no'} | {text} |")
        if self.omitted:
            lines += ["", "Omitted: " + ", ".join(self.omitted)]
        lines += [f"- warning: {w}" for w in self.warnings]
        return "\n".join(lines) + "\n"


def evaluate_bank(
    bank: HypothesisBank,
    dataset: Dataset,
    annotator=None,
    alpha: float = 0.05,
    positive: Any = None,
    fit_on: Dataset | None = None,
) -> EvaluationReport:
    """Count significant bank features on ``dataset`` (normally the held-out split)."""
    if len(bank) == 0:
        raise InferenceError("the bank is empty")
    y, _ = binary_outcome(list(dataset[dataset.outcome_column]), positive)
    matrix = featurize_by_bank(dataset, bank, annotator, fit_on=fit_on)
    sig = count_significant(matrix, y, alpha)
    texts = {r.id: r.text for r in bank}
    rows = []
    for name, p in sig.p_values.items():
        beta = sig.coefficients[name]
        odds = math.exp(beta) if abs(beta) < 700 else math.inf
        magnitude = describe_effect(EffectSize("odds_ratio", odds)) if math.isfinite(odds) and odds > 0 else "large"
        rid = term_column(name)
        rows.append(HypothesisRow(rid, texts.get(rid, ""), name, p, odds, magnitude, p < sig.threshold))
    omitted = tuple(r.id for r in bank if r.id not in {term_column(n) for n in matrix.names})
    return EvaluationReport(
        total_hypotheses=len(bank), tested_columns=sig.divisor, significant_count=sig.count, alpha=alpha,
        rows=tuple(rows), omitted=omitted, warnings=tuple(matrix.warnings) + sig.warnings,
    )
