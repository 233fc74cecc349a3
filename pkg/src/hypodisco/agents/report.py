"""Experimenter reports: structure, parsing and serialization.

The headline p-value and effect always come from the executor's result
for the step the report designates; numbers written in the report prose
are never read.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from ..features import FeatureSpec, PlanStep, Regress, Test, step_from_dict, step_to_dict
from ..features.plan import Featurize
from ..stats import INTERCEPT, EffectSize, RegressionResult, TestResult

VERDICTS = ("supported", "unsupported", "inconclusive")
SECTIONS = ("feature construction", "statistical test", "results", "robustness", "conclusion", "guidance")

_SECTION_RE = re.compile(
    r"^\s*(?:#+\s*)?(?:[-*]\s*)?\**\s*(" + "|".join(SECTIONS) + r")\s*\**\s*:?\s*\**\s*(.*)$",
    re.IGNORECASE,
)
_KEY_RE = re.compile(r"^\s*(?:[-*]\s*)?\**\s*(headline step|headline term|verdict)\s*\**\s*:\s*\**\s*(.*?)\s*\**\s*$",
                     re.IGNORECASE)

Result = TestResult | RegressionResult


class ReportParseError(ValueError):
    pass


def _result_to_dict(result: Result) -> dict[str, Any]:
    kind = "test" if isinstance(result, TestResult) else "regression"
    return {"kind": kind, **result.to_dict()}


def _result_from_dict(data: dict[str, Any]) -> Result:
    body = {k: v for k, v in data.items() if k != "kind"}
    return TestResult.from_dict(body) if data["kind"] == "test" else RegressionResult.from_dict(body)


def _p_json(p: float | None) -> Any:
    return None if p is None else p


@dataclass(frozen=True)
class AnalysisReport:
    hypothesis: str
    test_mode: bool
    verdict: str
    feature_construction: str = ""
    statistical_test: str = ""
    results_text: str = ""
    robustness: str = ""
    conclusion: str = ""
    refinement_guidance: str = ""
    headline_step: int | None = None
    headline_term: str | None = None
    headline_test: str | None = None
    headline_feature: str | None = None
    headline_p: float | None = None
    headline_effect: EffectSize | None = None
    extra_effects: tuple[EffectSize, ...] = ()
    support_n: int | None = None
    results: tuple[tuple[int, Result], ...] = ()
    plan: tuple[tuple[int, PlanStep], ...] = ()
    warnings: tuple[str, ...] = ()
    turns: int = 0

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")
        if self.verdict == "supported" and self.headline_p is None:
            raise ValueError("a supported verdict needs a headline p-value")

    @property
    def feature_specs_used(self) -> tuple[FeatureSpec, ...]:
        return tuple(step.spec for _, step in self.plan if isinstance(step, Featurize))

    def effect_of(self, kind: str) -> EffectSize | None:
        for eff in (self.headline_effect, *self.extra_effects):
            if eff is not None and eff.kind == kind:
                return eff
        return None

    def summary(self) -> str:
        """Short text handed back to the Generator."""
        lines = [f"Hypothesis: {self.hypothesis}", f"Verdict: {self.verdict}"]
        if self.headline_step is not None:
            term = f" term {self.headline_term}" if self.headline_term else ""
            lines.append(f"Headline: step {self.headline_step} ({self.headline_test}{term}), "
                         f"p = {self.headline_p:.4g}, n = {self.support_n}")
        if self.headline_effect is not None:
            eff = self.headline_effect
            ci = ""
            if eff.ci_low is not None and eff.ci_high is not None:
                ci = f" [95% CI {eff.ci_low:.3g}, {eff.ci_high:.3g}]"
            lines.append(f"Effect: {eff.kind} = {eff.value:.4g}{ci}")
        for label, text in (("Robustness", self.robustness), ("Conclusion", self.conclusion),
                            ("Guidance", self.refinement_guidance)):
            if text and not (label == "Guidance" and text == self.conclusion):
                lines.append(f"{label}: {text}")
        lines += [f"Warning: {w}" for w in self.warnings]
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {
            "hypothesis": self.hypothesis,
            "test_mode": self.test_mode,
            "verdict": self.verdict,
            "feature_construction": self.feature_construction,
            "statistical_test": self.statistical_test,
            "results_text": self.results_text,
            "robustness": self.robustness,
            "conclusion": self.conclusion,
            "refinement_guidance": self.refinement_guidance,
            "headline_step": self.headline_step,
            "headline_term": self.headline_term,
            "headline_test": self.headline_test,
            "headline_feature": self.headline_feature,
            "headline_p": _p_json(self.headline_p),
            "headline_effect": self.headline_effect.to_dict() if self.headline_effect else None,
            "extra_effects": [e.to_dict() for e in self.extra_effects],
            "support_n": self.support_n,
            "results": [{"step": s, "result": _result_to_dict(r)} for s, r in self.results],
            "plan": [{"step": s, **step_to_dict(st)} for s, st in self.plan],
            "warnings": list(self.warnings),
            "turns": self.turns,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AnalysisReport:
        eff = data.get("headline_effect")
        return cls(
            hypothesis=data["hypothesis"],
            test_mode=bool(data["test_mode"]),
            verdict=data["verdict"],
            feature_construction=data.get("feature_construction", ""),
            statistical_test=data.get("statistical_test", ""),
            results_text=data.get("results_text", ""),
            robustness=data.get("robustness", ""),
            conclusion=data.get("conclusion", ""),
            refinement_guidance=data.get("refinement_guidance", ""),
            headline_step=data.get("headline_step"),
            headline_term=data.get("headline_term"),
            headline_test=data.get("headline_test"),
            headline_feature=data.get("headline_feature"),
            headline_p=data.get("headline_p"),
            headline_effect=EffectSize.from_dict(eff) if eff else None,
            extra_effects=tuple(EffectSize.from_dict(e) for e in data.get("extra_effects", [])),
            support_n=data.get("support_n"),
            results=tuple((d["step"], _result_from_dict(d["result"])) for d in data.get("results", [])),
            plan=tuple((d["step"], step_from_dict({k: v for k, v in d.items() if k != "step"}))
                       for d in data.get("plan", [])),
            warnings=tuple(data.get("warnings", [])),
            turns=int(data.get("turns", 0)),
        )


def term_column(term: str) -> str:
    """Base column of a regression term (``party[R]`` -> ``party``)."""
    return term.split("[", 1)[0]


def _sections(text: str) -> tuple[dict[str, str], dict[str, str]]:
    sections: dict[str, list[str]] = {}
    keys: dict[str, str] = {}
    current: str | None = None
    for line in text.splitlines():
        key = _KEY_RE.match(line)
        if key:
            keys[key.group(1).lower()] = key.group(2).strip()
            current = None
            continue
        sec = _SECTION_RE.match(line)
        if sec:
            current = sec.group(1).lower()
            sections.setdefault(current, [])
            if sec.group(2).strip():
                sections[current].append(sec.group(2).strip())
            continue
        if current is not None:
            sections[current].append(line.strip())
    return {k: " ".join(x for x in v if x).strip() for k, v in sections.items()}, keys


def looks_like_report(text: str) -> bool:
    sections, keys = _sections(text)
    return "verdict" in keys or "headline step" in keys or "conclusion" in sections or "guidance" in sections


def parse_report(
    response: str,
    results: Mapping[int, Result],
    steps: Mapping[int, PlanStep],
    hypothesis: str,
    test_mode: bool = True,
    row_count: int | None = None,
) -> AnalysisReport:
    """Parse a final report; headline numbers come from ``results``."""
    sections, keys = _sections(response)
    verdict_text = keys.get("verdict", "").lower()
    verdict = next((v for v in VERDICTS if verdict_text.startswith(v)), None)
    if verdict is None:
        if test_mode:
            raise ReportParseError("report has no 'Verdict: supported | unsupported | inconclusive' line")
        verdict = "inconclusive"

    headline_step = None
    raw_step = keys.get("headline step", "")
    if raw_step and raw_step.lower() not in ("none", "n/a", "-"):
        m = re.search(r"\d+", raw_step)
        if not m:
            raise ReportParseError(f"headline step {raw_step!r} is not a step number")
        headline_step = int(m.group())
    if headline_step is None and test_mode:
        raise ReportParseError("formal testing needs a 'Headline Step: <n>' line")

    fields: dict[str, Any] = {}
    if headline_step is not None:
        if headline_step not in results:
            have = sorted(results) or "none"
            raise ReportParseError(f"headline step {headline_step} has no executed test or regression (have: {have})")
        result = results[headline_step]
        step = steps[headline_step]
        term = keys.get("headline term") or None
        if isinstance(result, TestResult):
            assert isinstance(step, Test)
            fields = dict(
                headline_test=result.test_name,
                headline_feature=step.feature,
                headline_p=result.p_two_sided,
                headline_effect=result.effect,
                extra_effects=result.extra_effects,
                support_n=result.n,
                headline_term=None,
            )
        else:
            assert isinstance(step, Regress)
            names = [n for n in result.coefficients if n != INTERCEPT]
            if term is None:
                own = [n for n in names if term_column(n) == step.features[0]]
                if len(own) != 1:
                    raise ReportParseError(f"name the regression term with 'Headline Term:' (one of {names})")
                term = own[0]
            if term not in result.coefficients or term == INTERCEPT:
                raise ReportParseError(f"headline term {term!r} is not in the regression (terms: {names})")
            fields = dict(
                headline_test="logistic_regression",
                headline_feature=term_column(term),
                headline_term=term,
                headline_p=result.coefficients[term].p,
                headline_effect=result.odds_ratio(term),
                support_n=result.n,
            )
        if row_count is not None and fields["support_n"] > row_count:
            raise ReportParseError("support exceeds the dataset row count")
        if math.isnan(fields["headline_p"]):
            raise ReportParseError("headline result has an undefined p-value")

    guidance = sections.get("guidance") or sections.get("conclusion", "")
    ordered = tuple(sorted(steps.items()))
    return AnalysisReport(
        hypothesis=hypothesis,
        test_mode=test_mode,
        verdict=verdict,
        feature_construction=sections.get("feature construction", ""),
        statistical_test=sections.get("statistical test", ""),
        results_text=sections.get("results", ""),
        robustness=sections.get("robustness", ""),
        conclusion=sections.get("conclusion", ""),
        refinement_guidance=guidance,
        headline_step=headline_step,
        results=tuple(sorted(results.items())),
        plan=ordered,
        **fields,
    )


def inconclusive_report(
    hypothesis: str,
    test_mode: bool,
    warning: str,
    results: Mapping[int, Result],
    steps: Mapping[int, PlanStep],
    turns: int,
) -> AnalysisReport:
    return AnalysisReport(
        hypothesis=hypothesis,
        test_mode=test_mode,
        verdict="inconclusive",
        refinement_guidance=warning,
        results=tuple(sorted(results.items())),
        plan=tuple(sorted(steps.items())),
        warnings=(warning,),
        turns=turns,
    )


def reports_by_headline(reports: Sequence[AnalysisReport]) -> dict[str, list[AnalysisReport]]:
    out: dict[str, list[AnalysisReport]] = {}
    for r in reports:
        if r.headline_feature is not None:
            out.setdefault(r.headline_feature, []).append(r)
    return out
