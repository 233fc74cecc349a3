"""Feature specifications shared by the plan executor and the annotator."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

IDENTIFIER_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
MAX_LABEL_CHARS = 40


class FeatureSpecError(ValueError):
    """A feature specification is malformed."""


@dataclass(frozen=True)
class FeatureSpec:
    """How to compute one new column.

    ``mode`` is ``"programmatic"`` (a built-in featurizer plus parameters)
    or ``"llm"`` (per-row labeling from ``labels`` by the annotator).
    """

    name: str
    description: str
    mode: str
    source_columns: tuple[str, ...]
    featurizer: str | None = None
    params: dict[str, Any] = field(default_factory=dict)
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "source_columns", tuple(self.source_columns))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "params", dict(self.params))
        if not IDENTIFIER_RE.match(self.name):
            raise FeatureSpecError(f"feature name {self.name!r} must be an identifier")
        if not self.source_columns:
            raise FeatureSpecError(f"feature {self.name!r} needs at least one source column")
        if self.mode == "llm":
            if len(set(self.labels)) < 2 or len(set(self.labels)) != len(self.labels):
                raise FeatureSpecError(f"feature {self.name!r} needs >= 2 distinct labels")
            long = [lab for lab in self.labels if len(lab) > MAX_LABEL_CHARS or not lab.strip()]
            if long:
                raise FeatureSpecError(f"labels must be 1-{MAX_LABEL_CHARS} characters: {long}")
            if len(self.source_columns) != 1:
                raise FeatureSpecError("llm features read exactly one source column")
        elif self.mode == "programmatic":
            # imported here: featurizers depend on this module for the error type
            from .featurizers import validate_featurizer

            if self.featurizer is None:
                raise FeatureSpecError(f"feature {self.name!r} names no featurizer")
            validate_featurizer(self.featurizer, self.params, len(self.source_columns))
        else:
            raise FeatureSpecError(f"unknown feature mode {self.mode!r}")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "description": self.description,
            "mode": self.mode,
            "source_columns": list(self.source_columns),
        }
        if self.mode == "programmatic":
            out["featurizer"] = self.featurizer
            out["params"] = dict(sorted(self.params.items()))
        else:
            out["labels"] = list(self.labels)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FeatureSpec:
        try:
            return cls(
                name=data["name"],
                description=data.get("description", ""),
                mode=data.get("mode", "programmatic"),
                source_columns=tuple(data["source_columns"]),
                featurizer=data.get("featurizer"),
                params=data.get("params") or {},
                labels=tuple(data.get("labels") or ()),
            )
        except KeyError as exc:
            raise FeatureSpecError(f"feature spec missing field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class AnnotationJob:
    """One llm-mode feature to label over ``rows`` (None means every row)."""

    feature: FeatureSpec
    rows: tuple[int, ...] | None = None
    cache_prefix: str = ""

    def __post_init__(self) -> None:
        if self.feature.mode != "llm":
            raise FeatureSpecError("annotation jobs need an llm-mode feature")
