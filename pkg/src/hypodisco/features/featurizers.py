"""Deterministic built-in featurizers over text and numeric columns."""

from __future__ import annotations

import math
import re
import string
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from ..dataset import ColumnKind, Dataset
from .spec import FeatureSpecError

_SENTENCE_END = re.compile(r"[.!?]+(?=\s|$)")
_WORD = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)*")
_VOWEL_GROUP = re.compile(r"[aeiouy]+")


@dataclass(frozen=True)
class Featurizer:
    func: Callable[..., np.ndarray]
    source_kind: str  # "text" or "numeric"
    arity: int
    required: tuple[str, ...] = ()
    optional: tuple[str, ...] = ()


def _per_text(values: Sequence[Any], fn: Callable[[str], float]) -> np.ndarray:
    return np.array([math.nan if v is None else float(fn(v)) for v in values], dtype=float)


def sentence_count(text: str) -> int:
    stripped = text.strip()
    if not stripped:
        return 0
    ends = len(_SENTENCE_END.findall(stripped))
    # a trailing clause without a terminator is still a sentence
    if stripped[-1] not in ".!?":
        ends += 1
    return ends


def count_syllables(word: str) -> int:
    """Vowel-group count with a silent trailing 'e' removed; at least 1."""
    w = word.lower().strip("'")
    if not w:
        return 0
    groups = len(_VOWEL_GROUP.findall(w))
    if w.endswith("e") and not w.endswith(("le", "ee", "ye")) and groups > 1:
        groups -= 1
    return max(groups, 1)


def flesch_kincaid_grade(text: str) -> float:
    words = _WORD.findall(text)
    if not words:
        return math.nan
    sentences = max(sentence_count(text), 1)
    syllables = sum(count_syllables(w) for w in words)
    return 0.39 * (len(words) / sentences) + 11.8 * (syllables / len(words)) - 15.59


def _uppercase_ratio(text: str) -> float:
    letters = [c for c in text if c.isalpha()]
    if not letters:
        return 0.0
    return sum(c.isupper() for c in letters) / len(letters)


def _compile(params: dict[str, Any]) -> re.Pattern[str]:
    flags = 0 if params["case_sensitive"] else re.IGNORECASE
    return re.compile(params["pattern"], flags)


def _text_length(cols, params):
    return _per_text(cols[0], len)


def _word_count(cols, params):
    return _per_text(cols[0], lambda s: len(s.split()))


def _sentence_count(cols, params):
    return _per_text(cols[0], sentence_count)


def _punctuation_count(cols, params):
    chars = set(params.get("chars", string.punctuation))
    return _per_text(cols[0], lambda s: sum(c in chars for c in s))


def _uppercase(cols, params):
    return _per_text(cols[0], _uppercase_ratio)


def _regex_present(cols, params):
    pat = _compile(params)
    return _per_text(cols[0], lambda s: pat.search(s) is not None)


def _regex_count(cols, params):
    pat = _compile(params)
    return _per_text(cols[0], lambda s: len(pat.findall(s)))


def _contains_phrase(cols, params):
    phrase = params["phrase"]
    if params.get("case_sensitive", False):
        return _per_text(cols[0], lambda s: phrase in s)
    needle = phrase.casefold()
    return _per_text(cols[0], lambda s: needle in s.casefold())


def _fk_grade(cols, params):
    return _per_text(cols[0], flesch_kincaid_grade)


def _numeric_bucket(cols, params):
    values = np.asarray(cols[0], dtype=float)
    edges = np.asarray(params["edges"], dtype=float)
    out = np.searchsorted(edges, values, side="right").astype(float)
    out[np.isnan(values)] = np.nan
    return out


def _token_set_overlap(cols, params):
    out = np.empty(len(cols[0]), dtype=float)
    for i, (a, b) in enumerate(zip(cols[0], cols[1])):
        if a is None or b is None:
            out[i] = math.nan
            continue
        sa, sb = set(a.lower().split()), set(b.lower().split())
        union = sa | sb
        out[i] = len(sa & sb) / len(union) if union else 0.0
    return out


FEATURIZERS: dict[str, Featurizer] = {
    "text_length": Featurizer(_text_length, "text", 1),
    "word_count": Featurizer(_word_count, "text", 1),
    "sentence_count": Featurizer(_sentence_count, "text", 1),
    "punctuation_count": Featurizer(_punctuation_count, "text", 1, optional=("chars",)),
    "uppercase_ratio": Featurizer(_uppercase, "text", 1),
    "regex_present": Featurizer(_regex_present, "text", 1, required=("pattern", "case_sensitive")),
    "regex_count": Featurizer(_regex_count, "text", 1, required=("pattern", "case_sensitive")),
    "contains_phrase": Featurizer(_contains_phrase, "text", 1, required=("phrase",), optional=("case_sensitive",)),
    "flesch_kincaid_grade": Featurizer(_fk_grade, "text", 1),
    "numeric_bucket": Featurizer(_numeric_bucket, "numeric", 1, required=("edges",)),
    "token_set_overlap": Featurizer(_token_set_overlap, "text", 2),
}

TEXT_KINDS = (ColumnKind.TEXT, ColumnKind.CATEGORICAL)


def validate_featurizer(featurizer: str, params: dict[str, Any], n_sources: int) -> None:
    """Raise FeatureSpecError unless the id, parameters and arity are valid."""
    spec = FEATURIZERS.get(featurizer)
    if spec is None:
        raise FeatureSpecError(f"unknown featurizer {featurizer!r}; choose from {sorted(FEATURIZERS)}")
    if n_sources != spec.arity:
        raise FeatureSpecError(f"{featurizer} reads {spec.arity} source column(s), got {n_sources}")
    missing = [k for k in spec.required if k not in params]
    if missing:
        raise FeatureSpecError(f"{featurizer} needs parameter(s) {missing}")
    unknown = sorted(set(params) - set(spec.required) - set(spec.optional))
    if unknown:
        raise FeatureSpecError(f"{featurizer} does not take parameter(s) {unknown}")
    if "pattern" in params:
        if not isinstance(params["pattern"], str):
            raise FeatureSpecError("pattern must be a string")
        try:
            re.compile(params["pattern"])
        except re.error as exc:
            raise FeatureSpecError(f"invalid regex {params['pattern']!r}: {exc}") from None
    if "case_sensitive" in params and not isinstance(params["case_sensitive"], bool):
        raise FeatureSpecError("case_sensitive must be true or false")
    if "phrase" in params and (not isinstance(params["phrase"], str) or not params["phrase"]):
        raise FeatureSpecError("phrase must be a non-empty string")
    if "chars" in params and (not isinstance(params["chars"], str) or not params["chars"]):
        raise FeatureSpecError("chars must be a non-empty string")
    if "edges" in params:
        edges = params["edges"]
        try:
            arr = np.asarray(edges, dtype=float)
        except (TypeError, ValueError):
            raise FeatureSpecError("edges must be a list of numbers") from None
        if arr.ndim != 1 or arr.size == 0 or not np.all(np.diff(arr) > 0) or not np.isfinite(arr).all():
            raise FeatureSpecError("edges must be a non-empty strictly increasing list of finite numbers")


def source_kind_ok(featurizer: str, kind: ColumnKind) -> bool:
    need = FEATURIZERS[featurizer].source_kind
    return kind in TEXT_KINDS if need == "text" else kind is ColumnKind.NUMERIC


def builtin_featurize(
    featurizer: str,
    params: dict[str, Any],
    dataset: Dataset,
    columns: Sequence[str],
) -> np.ndarray:
    """Compute a built-in feature for every row; null inputs give NaN."""
    validate_featurizer(featurizer, params, len(columns))
    for col in columns:
        kind = dataset.kind(col)
        if not source_kind_ok(featurizer, kind):
            need = FEATURIZERS[featurizer].source_kind
            raise FeatureSpecError(f"{featurizer} needs {need} input; column {col!r} is {kind.value}")
    return FEATURIZERS[featurizer].func([dataset[c] for c in columns], params)
