from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypodisco.agents import AnalysisReport
from hypodisco.dataset import Dataset
from hypodisco.features import step_from_dict
from hypodisco.inference import (
    BankRegressionClassifier,
    FeatureMatrix,
    InferenceError,
    binary_outcome,
    count_significant,
    evaluate_bank,
    featurize_by_bank,
    parse_selection,
    regression_infer,
    two_step_infer,
)
from hypodisco.llm import Gateway, ScriptedTransport, ScriptRule
from hypodisco.search import HypothesisBank, HypothesisRecord
from hypodisco.stats import EffectSize

LABELS = ["positive", "negative"]


def phrase_record(i: int, phrase: str, column: str = "review") -> HypothesisRecord:
    name = f"has_{phrase}"
    plan = (
        (1, step_from_dict({"op": "featurize", "spec": {
            "name": name, "description": f"contains {phrase}", "mode": "programmatic",
            "featurizer": "contains_phrase", "params": {"phrase": phrase}, "source_columns": [column]}})),
        (2, step_from_dict({"op": "test", "test": "two_proportion", "feature": name, "outcome": "label",
                            "positive": "positive", "exposed": 1})),
    )
    report = AnalysisReport(f"reviews with {phrase} are positive", True, "supported", headline_step=2,
                            headline_feature=name, headline_p=0.001, headline_effect=EffectSize("odds_ratio", 2.0),
                            support_n=10, plan=plan)
    return HypothesisRecord(HypothesisRecord.make_id(i, 1), report.hypothesis, i, 1, report, True, (1.0, 0.0))


def ten_rows() -> Dataset:
    texts = ["great stay", "great room", "bad smell", "great view", "noisy", "great staff", "dirty", "ok",
             "great pool", "cold"]
    labels = ["positive" if "great" in t else "negative" for t in texts]
    return Dataset.from_dict({"review": texts, "label": labels}, kinds={"review": "text"}, outcome_column="label")


def matrix(values, names=None) -> FeatureMatrix:
    values = np.asarray(values, dtype=float).reshape(len(values), -1)
    names = names or [f"c{k}" for k in range(values.shape[1])]
    return FeatureMatrix(list(names), values, ["real"] * len(names), list(names))


# ---------------------------------------------------------------- featurize_by_bank


def test_one_regex_feature_on_ten_rows():
    bank = HypothesisBank(3, [phrase_record(1, "great")])
    m = featurize_by_bank(ten_rows(), bank)
    assert m.shape == (10, 1) and m.names == ["h001-1"]
    assert m.column("h001-1").tolist() == [1, 1, 0, 1, 0, 1, 0, 0, 1, 0]


def test_missing_column_omits_hypothesis_with_warning(caplog):
    bank = HypothesisBank(3, [phrase_record(1, "great"), phrase_record(2, "pool", column="title")])
    m = featurize_by_bank(ten_rows(), bank)
    assert m.names == ["h001-1"]
    assert any("h002-1" in w and "title" in w for w in m.warnings)
    assert "title" in caplog.text


def test_featurization_never_reads_labels():
    bank = HypothesisBank(3, [phrase_record(1, "great")])
    data = ten_rows()
    relabelled = Dataset.from_dict({"review": list(data["review"]), "label": ["negative"] * 10},
                                   kinds={"review": "text"}, outcome_column="label")
    assert np.array_equal(featurize_by_bank(data, bank).values, featurize_by_bank(relabelled, bank).values)


def test_featurizing_twice_is_identical():
    bank = HypothesisBank(3, [phrase_record(1, "great"), phrase_record(2, "cold")])
    assert np.array_equal(featurize_by_bank(ten_rows(), bank).values, featurize_by_bank(ten_rows(), bank).values)


# ---------------------------------------------------------------- two-step inference


def gateway_replying(select: str, label: str, seen: list | None = None) -> Gateway:
    def respond(ex):
        if seen is not None:
            seen.append(ex.messages[-1].content)
        return select if "most relevant" in ex.messages[-1].content else label

    return Gateway(ScriptedTransport([ScriptRule(respond=respond)]))


def test_bank_of_one_skips_selection_call():
    pred = two_step_infer("great stay", ["h1"], gateway_replying("", "positive"), LABELS, k=3)
    assert pred.label == "positive" and pred.selected == (1,) and pred.calls == 1


def test_selection_reply_is_honoured_in_order():
    seen: list[str] = []
    hyps = [f"hypothesis number {k}" for k in range(1, 7)]
    pred = two_step_infer("great stay", hyps, gateway_replying("2, 5, 1", "negative", seen), LABELS)
    assert pred.selected == (2, 5, 1) and not pred.fallback and pred.label == "negative"
    second = seen[-1]
    assert "hypothesis number 2" in second and "hypothesis number 5" in second
    assert "hypothesis number 3" not in second


def test_unparseable_selection_falls_back_to_first_k():
    hyps = [f"h{k}" for k in range(6)]
    pred = two_step_infer("x", hyps, gateway_replying("none of them", "positive"), LABELS)
    assert pred.selected == (1, 2, 3) and pred.fallback


def test_unparseable_label_is_an_error():
    with pytest.raises(InferenceError, match="unparseable label"):
        two_step_infer("x", ["h"], gateway_replying("1", "maybe"), LABELS)


def test_empty_bank_is_an_error():
    with pytest.raises(InferenceError):
        two_step_infer("x", [], gateway_replying("1", "positive"), LABELS)


def test_parse_selection_bounds():
    assert parse_selection("7, 2, 2, 0, 3, 4", 6, 3) == [2, 3, 4]
    assert parse_selection("nothing", 6, 3) is None


# ---------------------------------------------------------------- regression inference


def test_perfect_feature_gives_full_accuracy():
    x = np.array([0, 1] * 50, dtype=float)
    pred = regression_infer(matrix(x), x, matrix(x), x)
    assert pred.accuracy == 1.0


def test_random_features_are_near_chance():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2000, 5))
    y = (rng.random(2000) < 0.5).astype(float)
    pred = regression_infer(matrix(x[:1000]), y[:1000], matrix(x[1000:]), y[1000:])
    assert abs(pred.accuracy - 0.5) <= 0.05


def test_missing_values_take_training_means():
    train = matrix([[0.0], [1.0], [np.nan], [1.0], [0.0], [1.0]])
    y = [0, 1, 0, 1, 1, 0]
    pred = regression_infer(train, y, matrix([[np.nan]]))
    assert np.isfinite(pred.probabilities).all()


def test_mismatched_columns_rejected():
    with pytest.raises(InferenceError, match="different columns"):
        regression_infer(matrix([[1.0]], ["a"]), [1], matrix([[1.0]], ["b"]))


def planted(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    x = (rng.random(n) < 0.5).astype(float)
    y = (rng.random(n) < np.where(x == 1, 0.4, 0.2)).astype(float)
    return x, y


def test_planted_feature_beats_majority_baseline():
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x, y = planted(rng, 2000)
        pred = regression_infer(matrix(x[:1000]), y[:1000], matrix(x[1000:]), y[1000:])
        y_test = y[1000:].astype(int)
        correct = int((pred.predictions == y_test).sum())
        wins += correct > max(y_test.sum(), (1 - y_test).sum())
    assert wins >= 95


def test_bank_regression_classifier_round_trip():
    data = ten_rows()
    model = BankRegressionClassifier(HypothesisBank(3, [phrase_record(1, "bad"), phrase_record(2, "noisy")]))
    model.fit(data)
    assert model.predict(data).shape == (10,)
    assert 0.0 <= model.score(data) <= 1.0


def test_binary_outcome_mapping():
    y, pos = binary_outcome(["negative", "positive", "positive"])
    assert pos == "positive" and y.tolist() == [0, 1, 1]
    with pytest.raises(InferenceError):
        binary_outcome(["a", "b", "c"])


# ---------------------------------------------------------------- significance counting


def noise_and_planted(seed: int, planted_column: bool) -> tuple[FeatureMatrix, np.ndarray]:
    rng = np.random.default_rng(seed)
    x = (rng.random((2000, 10)) < 0.5).astype(float)
    if planted_column:
        y = (rng.random(2000) < np.where(x[:, 0] == 1, 0.4, 0.2)).astype(float)
    else:
        y = (rng.random(2000) < 0.3).astype(float)
    return matrix(x), y


def test_planted_column_found_alone():
    hits = sum(count_significant(*noise_and_planted(s, True)).significant == ["c0"] for s in range(100))
    assert hits >= 90


def test_null_features_rarely_significant():
    zeros = sum(count_significant(*noise_and_planted(s, False)).count == 0 for s in range(100))
    assert zeros >= 95


def test_duplicate_column_dropped_with_warning():
    m, y = noise_and_planted(0, True)
    dup = FeatureMatrix(m.names + ["copy"], np.column_stack([m.values, m.values[:, 0]]), m.kinds + ["binary"],
                        m.sources + ["copy"])
    report = count_significant(dup, y)
    assert report.dropped == {"copy": "collinear"}
    assert report.divisor == 10
    assert any("collinear" in w for w in report.warnings)


def test_constant_column_dropped():
    m = matrix(np.column_stack([np.ones(50), np.arange(50) % 2]))
    report = count_significant(m, (np.arange(50) % 3 == 0).astype(float))
    assert report.dropped == {"c0": "constant"} and report.divisor == 1


def test_all_constant_is_an_error():
    with pytest.raises(InferenceError):
        count_significant(matrix(np.ones((20, 2))), np.arange(20) % 2)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(0, 4))
def test_duplicates_never_raise_the_count(seed, k):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(300, 5))
    y = (rng.random(300) < 1 / (1 + np.exp(-x[:, 0]))).astype(float)
    base = count_significant(matrix(x), y)
    dup = count_significant(matrix(np.column_stack([x, x[:, k]]), [f"c{j}" for j in range(5)] + ["dup"]), y)
    assert dup.count <= base.count


# ---------------------------------------------------------------- evaluation


def test_evaluate_empty_bank_is_an_error():
    with pytest.raises(InferenceError, match="empty"):
        evaluate_bank(HypothesisBank(3), ten_rows())


def test_evaluation_report_names_divisor():
    rng = np.random.default_rng(4)
    n = 400
    marker = rng.random(n) < 0.5
    labels = np.where(rng.random(n) < np.where(marker, 0.8, 0.2), "positive", "negative")
    texts = ["great" if m else "fine" for m in marker]
    data = Dataset.from_dict({"review": texts, "label": labels.tolist()}, kinds={"review": "text"},
                             outcome_column="label")
    report = evaluate_bank(HypothesisBank(3, [phrase_record(1, "great")]), data, positive="positive")
    assert report.divisor == 1 and report.significant_count == 1
    assert "0.05 / 1" in report.to_markdown()
