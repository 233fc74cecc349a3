"""Result containers shared by the tests, the regression solver and the logs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

EFFECT_KINDS = (
    "cohens_d",
    "rank_biserial_r",
    "odds_ratio",
    "relative_risk",
    "cramers_v",
    "pearson_r",
)


def _num_to_json(x: float | None) -> Any:
    # json has no inf/nan literals that round-trip portably
    if x is None:
        return None
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _num_from_json(x: Any) -> float | None:
    if x is None:
        return None
    if isinstance(x, str):
        return float(x)
    return float(x)


@dataclass(frozen=True)
class EffectSize:
    kind: str
    value: float
    ci_low: float | None = None
    ci_high: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in EFFECT_KINDS:
            raise ValueError(f"unknown effect kind {self.kind!r}")
        if self.kind in ("odds_ratio", "relative_risk") and not math.isnan(self.value):
            if self.value <= 0:
                raise ValueError(f"{self.kind} must be positive, got {self.value}")
        if self.kind == "rank_biserial_r" and not -1.0 <= self.value <= 1.0:
            raise ValueError(f"rank-biserial r outside [-1, 1]: {self.value}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "value": _num_to_json(self.value),
            "ci_low": _num_to_json(self.ci_low),
            "ci_high": _num_to_json(self.ci_high),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EffectSize:
        return cls(
            kind=data["kind"],
            value=_num_from_json(data["value"]),
            ci_low=_num_from_json(data.get("ci_low")),
            ci_high=_num_from_json(data.get("ci_high")),
        )


@dataclass(frozen=True)
class TestResult:
    """Outcome of one two-group or contingency test.

    ``effect`` is the primary effect size; ``extra_effects`` carries the
    companions some tests report (the two-proportion test reports both the
    relative risk and the odds ratio).
    """

    __test__ = False  # keep pytest from collecting this class

    test_name: str
    statistic: float
    p_two_sided: float
    effect: EffectSize
    group_sizes: tuple[int, ...]
    degrees_of_freedom: float | None = None
    warnings: tuple[str, ...] = ()
    extra_effects: tuple[EffectSize, ...] = ()

    def __post_init__(self) -> None:
        if not (0.0 <= self.p_two_sided <= 1.0):
            raise ValueError(f"p-value outside [0, 1]: {self.p_two_sided}")
        if any(n < 1 for n in self.group_sizes):
            raise ValueError(f"empty group in {self.group_sizes}")

    @property
    def n(self) -> int:
        return int(sum(self.group_sizes))

    def effect_of(self, kind: str) -> EffectSize | None:
        for eff in (self.effect, *self.extra_effects):
            if eff.kind == kind:
                return eff
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "test_name": self.test_name,
            "statistic": _num_to_json(self.statistic),
            "degrees_of_freedom": _num_to_json(self.degrees_of_freedom),
            "p_two_sided": self.p_two_sided,
            "effect": self.effect.to_dict(),
            "extra_effects": [e.to_dict() for e in self.extra_effects],
            "group_sizes": list(self.group_sizes),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TestResult:
        return cls(
            test_name=data["test_name"],
            statistic=_num_from_json(data["statistic"]),
            degrees_of_freedom=_num_from_json(data.get("degrees_of_freedom")),
            p_two_sided=float(data["p_two_sided"]),
            effect=EffectSize.from_dict(data["effect"]),
            extra_effects=tuple(EffectSize.from_dict(e) for e in data.get("extra_effects", [])),
            group_sizes=tuple(int(n) for n in data["group_sizes"]),
            warnings=tuple(data.get("warnings", [])),
        )


@dataclass(frozen=True)
class Coefficient:
    beta: float
    std_err: float
    wald_z: float
    p: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "beta": _num_to_json(self.beta),
            "std_err": _num_to_json(self.std_err),
            "wald_z": _num_to_json(self.wald_z),
            "p": _num_to_json(self.p),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Coefficient:
        return cls(**{k: _num_from_json(data[k]) for k in ("beta", "std_err", "wald_z", "p")})


@dataclass(frozen=True)
class RegressionResult:
    coefficients: dict[str, Coefficient]
    n: int
    converged: bool
    iterations: int
    log_likelihood: float
    warnings: tuple[str, ...] = field(default=())

    def __getitem__(self, name: str) -> Coefficient:
        return self.coefficients[name]

    def odds_ratio(self, name: str) -> EffectSize:
        coef = self.coefficients[name]
        half = 1.959963984540054 * coef.std_err
        return EffectSize(
            "odds_ratio",
            math.exp(coef.beta),
            ci_low=math.exp(coef.beta - half),
            ci_high=math.exp(coef.beta + half),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "coefficients": {k: v.to_dict() for k, v in self.coefficients.items()},
            "n": self.n,
            "converged": self.converged,
            "iterations": self.iterations,
            "log_likelihood": _num_to_json(self.log_likelihood),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RegressionResult:
        return cls(
            coefficients={k: Coefficient.from_dict(v) for k, v in data["coefficients"].items()},
            n=int(data["n"]),
            converged=bool(data["converged"]),
            iterations=int(data["iterations"]),
            log_likelihood=_num_from_json(data["log_likelihood"]),
            warnings=tuple(data.get("warnings", [])),
        )


def describe_effect(effect: EffectSize) -> str:
    """Label an effect as ``small``, ``moderate`` or ``large``.

    Ratio measures are folded around 1 (an OR of 0.4 reads like 2.5) and
    graded at 1.35 / 2.0. Correlation-type measures use |r| at 0.2 / 0.5,
    Cohen's d the conventional 0.5 / 0.8.
    """
    value = effect.value
    if math.isnan(value):
        raise ValueError("cannot describe an undefined effect")
    if effect.kind in ("odds_ratio", "relative_risk"):
        ratio = value if value >= 1.0 else 1.0 / value
        if ratio > 2.0:
            return "large"
        if ratio >= 1.35:
            return "moderate"
        return "small"
    if effect.kind == "cohens_d":
        d = abs(value)
        if d > 0.8:
            return "large"
        if d >= 0.5:
            return "moderate"
        return "small"
    r = abs(value)
    if r > 0.5:
        return "large"
    if r >= 0.2:
        return "moderate"
    return "small"
