from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypodisco.dataset import (
    ColumnKind,
    DataLoadError,
    Dataset,
    SamplingStrategy,
    augment_column,
    holdout_split,
    infer_kind,
    load_table,
    sample_observations,
    summarize,
    truncate_cell,
)


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------- loading and typing


def test_load_small_csv(tmp_path):
    path = _write(
        tmp_path,
        "r.csv",
        "review,label\n"
        "The room was spotless and the staff were kind,positive\n"
        "Noisy street and a broken shower all week,negative\n"
        "Would stay again for the breakfast alone,positive\n",
    )
    ds = load_table(path)
    assert ds.row_count == 3
    assert ds.schema() == {"review": ColumnKind.TEXT, "label": ColumnKind.CATEGORICAL}


def test_hash_column_kept_but_flagged(tmp_path):
    rng = np.random.default_rng(0)
    hashes = [f"{rng.integers(0, 2**63):016x}" for _ in range(500)]
    rows = "\n".join(f"{h},{'yes' if k % 2 else 'no'}" for k, h in enumerate(hashes))
    ds = load_table(_write(tmp_path, "h.csv", "row_hash,label\n" + rows + "\n"))
    assert "row_hash" in ds
    assert ds.column("row_hash").identifier_like
    digest = summarize(ds, [0, 1, 2]).rendered_text
    assert "row_hash" not in digest
    assert hashes[0] not in digest


def test_numeric_column_inferred(tmp_path):
    ds = load_table(_write(tmp_path, "n.csv", "x,y\n1,a\n2.5,b\n-3e2,a\n"))
    assert ds.kind("x") is ColumnKind.NUMERIC


def test_records_format(tmp_path):
    lines = [json.dumps({"text": f"entry {k}", "score": k % 3}) for k in range(6)]
    ds = load_table(_write(tmp_path, "r.jsonl", "\n".join(lines) + "\n"))
    assert ds.row_count == 6 and ds.kind("score") is ColumnKind.NUMERIC


def test_malformed_row_names_index(tmp_path):
    with pytest.raises(DataLoadError, match="malformed row 1"):
        load_table(_write(tmp_path, "bad.csv", "a,b\n1,2\n3\n"))


def test_empty_file(tmp_path):
    with pytest.raises(DataLoadError, match="empty"):
        load_table(_write(tmp_path, "e.csv", ""))


def test_duplicate_headers(tmp_path):
    with pytest.raises(DataLoadError, match="duplicate"):
        load_table(_write(tmp_path, "d.csv", "a,a\n1,2\n"))


def test_missing_file(tmp_path):
    with pytest.raises(DataLoadError):
        load_table(tmp_path / "nope.csv")


@pytest.mark.parametrize(
    ("values", "kind"),
    [
        (["1", "2.5", "3"], ColumnKind.NUMERIC),
        (["a", "b", "c"] * 166 + ["a", "b"], ColumnKind.CATEGORICAL),
        (["img/a.png", "img/b.jpg"], ColumnKind.IMAGE_PATH),
        (["2024-01-02", "2024-02-03T10:00:00"], ColumnKind.TIMESTAMP),
        (["a long sentence of free text here", "another long sentence of free text"], ColumnKind.TEXT),
    ],
)
def test_infer_kind(values, kind):
    assert infer_kind(values) is kind


def test_infer_kind_precedence_numeric_over_categorical():
    assert infer_kind(["0", "1"] * 50) is ColumnKind.NUMERIC


def test_outcome_must_exist():
    with pytest.raises(KeyError):
        Dataset.from_dict({"a": [1, 2]}, outcome_column="b")


# ---------------------------------------------------------------- digest


def test_numeric_summary_hand_arithmetic():
    ds = Dataset.from_dict({"x": [1, 2, 3, 4], "g": ["a", "b", "a", "b"]})
    digest = summarize(ds)
    s = digest.numeric_summary["x"]
    assert s["mean"] == pytest.approx(2.5)
    assert round(s["std"], 2) == 1.29
    assert s["min"] == 1.0 and s["max"] == 4.0
    lines = digest.rendered_text.splitlines()
    assert any(line.split() == ["mean", "2.50"] for line in lines)
    assert any(line.split() == ["std", "1.29"] for line in lines)


def test_length_block_layout():
    spread = 44.48 * np.sqrt(499 / 500)
    length = np.r_[np.full(250, 249.5 - spread), np.full(250, 249.5 + spread)]
    ds = Dataset.from_dict({"label": ["truthful", "deceptive"] * 250, "length": list(length)})
    text = summarize(ds).rendered_text
    assert "RangeIndex: 500 entries, 0 to 499" in text
    assert "count  500.00\nmean   249.50\nstd     44.48\n" in text


def test_long_text_truncated_to_100():
    review = "w" * 180
    ds = Dataset.from_dict({"review": [review, "short one here"], "label": ["a", "b"]})
    digest = summarize(ds, [0])
    cell = digest.sample_rows[0][digest.sample_headers.index("review")]
    assert len(cell) == 100
    assert cell.endswith("..")


def test_digest_deterministic():
    ds = Dataset.from_dict({"x": [3.0, 1.0, 2.0, 5.0], "t": ["aa bb", "cc", "dd ee", "ff"]})
    assert summarize(ds, [1, 3]).rendered_text == summarize(ds, [1, 3]).rendered_text


def test_augment_column_shows_in_digest():
    ds = Dataset.from_dict({"text": ["a b", "c d", "e f"], "label": ["x", "y", "x"]})
    out = augment_column(ds, "has_cite", ColumnKind.NUMERIC, [1, 0, 1])
    assert out.names == ["text", "label", "has_cite"]
    assert any(row[0] == "has_cite" for row in summarize(out).structural)
    assert "has_cite" not in ds


def test_augment_column_errors():
    ds = Dataset.from_dict({"text": ["a b", "c d", "e f"]})
    with pytest.raises(ValueError):
        augment_column(ds, "flag", ColumnKind.NUMERIC, [1, 0])
    with pytest.raises(ValueError):
        augment_column(ds, "text", ColumnKind.TEXT, ["x", "y", "z"])


@given(st.text(max_size=3000))
@settings(max_examples=60, deadline=None)
def test_truncation_bound(text):
    assert len(truncate_cell(text)) <= 100


def test_truncation_bound_megabyte_cell():
    ds = Dataset.from_dict({"doc": ["z" * 1_000_000, "tiny"], "label": ["a", "b"]})
    digest = summarize(ds, [0, 1])
    assert all(len(cell) <= 100 for row in digest.sample_rows for cell in row)


@given(st.lists(st.integers(0, 10_000), min_size=10, max_size=40, unique=True))
@settings(max_examples=40, deadline=None)
def test_all_distinct_identifier_columns_absent(ids):
    ds = Dataset.from_dict({"row_id": [f"id{v}" for v in ids], "flag": [k % 2 for k in range(len(ids))]})
    digest = summarize(ds, range(min(3, len(ids))))
    assert "row_id" not in digest.rendered_text
    assert all(name != "row_id" for name, _, _ in digest.structural)


# ---------------------------------------------------------------- sampling


def _rows(n: int) -> Dataset:
    return Dataset.from_dict({"v": list(range(n)), "t": [f"row {k} text" for k in range(n)]})


def test_sampling_none():
    assert sample_observations(_rows(10), SamplingStrategy("none"), 0) == []


def test_boosting_degenerate_weights():
    assert sample_observations(_rows(3), SamplingStrategy("boosting", k=1), 0, aux=np.array([0, 0, 1.0])) == [2]


def test_random_sampling_deterministic():
    ds = _rows(100)
    s = SamplingStrategy("random", k=5)
    first = sample_observations(ds, s, 42)
    assert first == sample_observations(ds, s, 42)
    assert len(set(first)) == 5


def test_boosting_zero_weights_falls_back():
    picked = sample_observations(_rows(10), SamplingStrategy("boosting", k=3), 1, aux=np.zeros(10))
    assert len(picked) == 3


def test_boosting_distribution():
    ds = _rows(2)
    s = SamplingStrategy("boosting", k=1)
    w = np.array([1.0, 3.0])
    hits = sum(sample_observations(ds, s, seed, aux=w) == [1] for seed in range(10_000))
    assert abs(hits / 10_000 - 0.75) <= 0.02


def test_clustering_one_per_cluster():
    ds = _rows(30)
    emb = np.repeat(np.eye(3) * 10, 10, axis=0) + np.random.default_rng(0).normal(0, 0.01, (30, 3))
    picked = sample_observations(ds, SamplingStrategy("clustering", k=3, num_clusters=3), 5, aux=emb)
    assert sorted({p // 10 for p in picked}) == [0, 1, 2]


def test_sampling_strategy_validation():
    with pytest.raises(ValueError):
        SamplingStrategy("random", k=0)
    assert str(SamplingStrategy.parse("clustering:6:3")) == "clustering:6:3"


# ---------------------------------------------------------------- holdout


def test_holdout_sizes_and_determinism():
    ds = _rows(100)
    train, test = holdout_split(ds, 0.2, 7)
    assert (train.row_count, test.row_count) == (80, 20)
    again = holdout_split(ds, 0.2, 7)
    assert list(again[1]["v"]) == list(test["v"])
    assert sorted([*train["v"], *test["v"]]) == list(range(100))


def test_holdout_rejects_bad_fraction():
    with pytest.raises(ValueError):
        holdout_split(_rows(10), 1.0, 0)


@given(st.integers(4, 300), st.floats(0.01, 0.99), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_holdout_partition(n, fraction, seed):
    train, test = holdout_split(_rows(n), fraction, seed)
    a, b = set(train["v"].tolist()), set(test["v"].tolist())
    assert not a & b and a | b == set(range(n))
    assert abs(test.row_count - n * fraction) <= 1 or test.row_count in (1, n - 1)


def test_tiny_tables_never_flag_identifiers():
    ds = Dataset.from_dict({"x": [1, 2, 3, 4]})
    assert not ds.column("x").identifier_like
