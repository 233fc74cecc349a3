"""Typed in-memory tables: loading, kind inference, digests and sampling."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

NULL_TOKENS = frozenset({"", "na", "n/a", "nan", "null", "none"})
CELL_WIDTH = 100
TOP_CATEGORIES = 10
MIN_IDENTIFIER_ROWS = 10

_IMAGE_RE = re.compile(r"^[^\s]+\.(png|jpe?g|gif|bmp|webp|tiff?)$", re.IGNORECASE)
_DATE_FORMATS = ("%Y/%m/%d", "%Y/%m/%d %H:%M:%S")


class DataLoadError(ValueError):
    """Raised when a table file cannot be parsed."""


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    TEXT = "text"
    TIMESTAMP = "timestamp"
    IMAGE_PATH = "image_path"

    @property
    def is_orderable(self) -> bool:
        return self in (ColumnKind.NUMERIC, ColumnKind.TIMESTAMP)

    @property
    def is_float(self) -> bool:
        return self.is_orderable


# --------------------------------------------------------------------------- parsing


def is_null(value: Any) -> bool:
    if value is None:
        return True
    if isinstance(value, float) and math.isnan(value):
        return True
    return isinstance(value, str) and value.strip().lower() in NULL_TOKENS


def _parse_float(s: str) -> float | None:
    try:
        return float(s)
    except ValueError:
        return None


def parse_timestamp(s: str) -> float | None:
    """Seconds since the Unix epoch for ISO-8601 text; naive times are UTC."""
    text = s.strip()
    if not text:
        return None
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = None
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        for fmt in _DATE_FORMATS:
            try:
                dt = datetime.strptime(text, fmt)
                break
            except ValueError:
                continue
    if dt is None:
        return None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(seconds: float) -> str:
    dt = datetime.fromtimestamp(seconds, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def _word_count(s: str) -> int:
    return len(s.split())


def infer_kind(values: Sequence[Any]) -> ColumnKind:
    """Classify a raw column.

    Precedence is numeric > timestamp > image path > categorical > text.
    Categorical means at most max(20, 5% of rows) distinct short labels
    that either repeat or are one- or two-word tokens; anything else
    falls through to free text.
    """
    if len(values) == 0:
        raise ValueError("cannot infer the kind of an empty column")
    present = [str(v).strip() for v in values if not is_null(v)]
    if not present:
        return ColumnKind.TEXT
    if all(_parse_float(v) is not None for v in present):
        return ColumnKind.NUMERIC
    if all(parse_timestamp(v) is not None for v in present):
        return ColumnKind.TIMESTAMP
    if all(_IMAGE_RE.match(v) for v in present):
        return ColumnKind.IMAGE_PATH
    distinct = set(present)
    limit = max(20, 0.05 * len(values))
    if len(distinct) <= limit:
        mean_len = sum(len(v) for v in present) / len(present)
        words = sorted(_word_count(v) for v in present)
        median_words = words[len(words) // 2]
        if mean_len <= 50 and (len(distinct) < len(present) or median_words <= 2):
            return ColumnKind.CATEGORICAL
    return ColumnKind.TEXT


def _convert(values: Iterable[Any], kind: ColumnKind) -> np.ndarray:
    vals = list(values)
    if kind is ColumnKind.NUMERIC:
        out = np.empty(len(vals), dtype=float)
        for i, v in enumerate(vals):
            if is_null(v):
                out[i] = np.nan
            elif isinstance(v, (bool, np.bool_)):
                out[i] = float(v)
            else:
                f = _parse_float(str(v)) if isinstance(v, str) else float(v)
                if f is None:
                    raise ValueError(f"row {i}: {v!r} is not numeric")
                out[i] = f
        return out
    if kind is ColumnKind.TIMESTAMP:
        out = np.empty(len(vals), dtype=float)
        for i, v in enumerate(vals):
            if is_null(v):
                out[i] = np.nan
            elif isinstance(v, (int, float, np.number)):
                out[i] = float(v)
            else:
                ts = parse_timestamp(str(v))
                if ts is None:
                    num = _parse_float(str(v))
                    if num is None:
                        raise ValueError(f"row {i}: {v!r} is not a timestamp")
                    ts = num
                out[i] = ts
        return out
    out = np.empty(len(vals), dtype=object)
    for i, v in enumerate(vals):
        out[i] = None if is_null(v) else str(v)
    return out


# --------------------------------------------------------------------------- table


@dataclass(frozen=True)
class Column:
    name: str
    kind: ColumnKind
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values.flags.writeable = False

    def null_mask(self) -> np.ndarray:
        if self.kind.is_float:
            return np.isnan(self.values)
        return np.array([v is None for v in self.values], dtype=bool)

    @property
    def non_null_count(self) -> int:
        return int((~self.null_mask()).sum())

    @property
    def identifier_like(self) -> bool:
        """True for row-ID or hash shaped columns (every value distinct).

        Free text, floats and timestamps are never flagged even when all
        values differ; only single-token strings and integer ranges are.
        Below ``MIN_IDENTIFIER_ROWS`` rows distinctness is no evidence.
        """
        n = self.values.size
        if n < MIN_IDENTIFIER_ROWS or self.non_null_count != n:
            return False
        if self.kind is ColumnKind.NUMERIC:
            v = self.values
            if not np.all(v == np.round(v)):
                return False
            return np.unique(v).size == n and float(v.max() - v.min()) == n - 1
        if self.kind in (ColumnKind.TEXT, ColumnKind.CATEGORICAL):
            if len(set(self.values)) != n:
                return False
            return all(len(str(v).split()) == 1 for v in self.values)
        return False


class Dataset:
    """An ordered set of equally long typed columns with an optional outcome."""

    def __init__(self, columns: Sequence[Column], outcome_column: str | None = None):
        names = [c.name for c in columns]
        dupes = sorted(n for n, k in Counter(names).items() if k > 1)
        if dupes:
            raise ValueError(f"duplicate column names: {dupes}")
        lengths = {c.values.size for c in columns}
        if len(lengths) > 1:
            raise ValueError(f"columns have different lengths: {sorted(lengths)}")
        self._columns: dict[str, Column] = {c.name: c for c in columns}
        self.row_count = lengths.pop() if lengths else 0
        if outcome_column is not None:
            if outcome_column not in self._columns:
                raise KeyError(f"outcome column {outcome_column!r} not in dataset")
            kind = self._columns[outcome_column].kind
            if kind not in (ColumnKind.CATEGORICAL, ColumnKind.NUMERIC):
                raise ValueError(f"outcome column {outcome_column!r} must be categorical or numeric, is {kind.value}")
        self.outcome_column = outcome_column

    @classmethod
    def from_dict(
        cls,
        data: dict[str, Sequence[Any]],
        kinds: dict[str, ColumnKind | str] | None = None,
        outcome_column: str | None = None,
    ) -> Dataset:
        kinds = kinds or {}
        cols = []
        for name, values in data.items():
            vals = list(values)
            raw_kind = kinds.get(name)
            if raw_kind is None:
                raw_kind = infer_kind(["" if v is None else str(v) for v in vals])
            kind = ColumnKind(raw_kind)
            cols.append(Column(name, kind, _convert(vals, kind)))
        return cls(cols, outcome_column=outcome_column)

    @property
    def columns(self) -> list[Column]:
        return list(self._columns.values())

    @property
    def names(self) -> list[str]:
        return list(self._columns)

    def __contains__(self, name: object) -> bool:
        return name in self._columns

    def __getitem__(self, name: str) -> np.ndarray:
        return self.column(name).values

    def __len__(self) -> int:
        return self.row_count

    def column(self, name: str) -> Column:
        try:
            return self._columns[name]
        except KeyError:
            raise KeyError(f"no column named {name!r}") from None

    def kind(self, name: str) -> ColumnKind:
        return self.column(name).kind

    def schema(self) -> dict[str, ColumnKind]:
        return {c.name: c.kind for c in self._columns.values()}

    def take(self, indices: Sequence[int]) -> Dataset:
        idx = np.asarray(indices, dtype=int)
        cols = [Column(c.name, c.kind, c.values[idx].copy()) for c in self._columns.values()]
        return Dataset(cols, outcome_column=self.outcome_column)

    def with_outcome(self, name: str | None) -> Dataset:
        return Dataset(self.columns, outcome_column=name)

    def without_outcome_values(self) -> Dataset:
        """Copy with the outcome column removed (used to keep inference blind)."""
        cols = [c for c in self._columns.values() if c.name != self.outcome_column]
        return Dataset(cols)

    def __repr__(self) -> str:
        kinds = ", ".join(f"{c.name}:{c.kind.value}" for c in self._columns.values())
        return f"Dataset({self.row_count} rows; {kinds})"


def augment_column(dataset: Dataset, name: str, kind: ColumnKind | str, values: Sequence[Any]) -> Dataset:
    """Return a new dataset with ``name`` appended."""
    kind = ColumnKind(kind)
    if name in dataset:
        raise ValueError(f"column {name!r} already exists")
    vals = list(values) if not isinstance(values, np.ndarray) else values
    if len(vals) != dataset.row_count:
        raise ValueError(f"column {name!r} has {len(vals)} values, dataset has {dataset.row_count} rows")
    column = Column(name, kind, _convert(vals, kind))
    return Dataset([*dataset.columns, column], outcome_column=dataset.outcome_column)


# --------------------------------------------------------------------------- loading


def _detect_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix in (".jsonl", ".ndjson", ".json"):
        return "records"
    return "delimited"


def _read_delimited(path: Path, text: str) -> tuple[list[str], list[list[str]]]:
    first = text.splitlines()[0]
    delimiter = "\t" if path.suffix.lower() == ".tsv" or ("\t" in first and "," not in first) else ","
    reader = csv.reader(text.splitlines(keepends=True), delimiter=delimiter)
    rows = list(reader)
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataLoadError(
                f"{path}: malformed row {i} (line {i + 2}): "
                f"expected {len(header)} fields, got {len(row)}"
            )
    return header, body


def _json_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return str(value)


def _read_records(path: Path, text: str) -> tuple[list[str], list[list[str]]]:
    header: list[str] = []
    records: list[dict[str, Any]] = []
    for i, line in enumerate(ln for ln in text.splitlines() if ln.strip()):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataLoadError(f"{path}: malformed row {i}: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise DataLoadError(f"{path}: malformed row {i}: expected an object")
        for k, v in obj.items():
            if isinstance(v, (dict, list)):
                raise DataLoadError(f"{path}: malformed row {i}: key {k!r} is nested")
            if k not in header:
                header.append(k)
        records.append(obj)
    body = [[_json_cell(r.get(k)) for k in header] for r in records]
    return header, body


def load_table(
    path: str | Path,
    format: str | None = None,
    outcome_column: str | None = None,
    kinds: dict[str, ColumnKind | str] | None = None,
) -> Dataset:
    """Load a delimited (csv/tsv) or line-delimited JSON records file.

    Column kinds are inferred unless overridden in ``kinds``; row order is
    preserved.
    """
    path = Path(path)
    if not path.exists():
        raise DataLoadError(f"{path}: no such file")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise DataLoadError(f"{path}: file is empty")
    fmt = format or _detect_format(path)
    if fmt == "delimited":
        header, body = _read_delimited(path, text)
    elif fmt == "records":
        header, body = _read_records(path, text)
    else:
        raise ValueError(f"unknown table format {fmt!r}; use 'delimited' or 'records'")
    dupes = sorted(n for n, k in Counter(header).items() if k > 1)
    if dupes:
        raise DataLoadError(f"{path}: duplicate header names {dupes}")
    if not body:
        raise DataLoadError(f"{path}: no data rows")
    data = {name: [row[j] for row in body] for j, name in enumerate(header)}
    ds = Dataset.from_dict(data, kinds=kinds)
    for col in ds.columns:
        if col.identifier_like:
            logger.info("column %r looks like an identifier; kept but omitted from digests", col.name)
    if outcome_column is not None:
        if outcome_column not in ds:
            raise KeyError(f"outcome column {outcome_column!r} not in {path}")
        ds = ds.with_outcome(outcome_column)
    return ds


# --------------------------------------------------------------------------- digest


def _fmt2(x: float) -> str:
    return f"{x:.2f}"


def describe_numeric(values: np.ndarray) -> dict[str, float]:
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return {k: math.nan for k in ("count", "mean", "std", "min", "25%", "50%", "75%", "max")}
    return {
        "count": float(v.size),
        "mean": float(v.mean()),
        "std": float(v.std(ddof=1)) if v.size > 1 else math.nan,
        "min": float(v.min()),
        "25%": float(np.quantile(v, 0.25)),
        "50%": float(np.quantile(v, 0.5)),
        "75%": float(np.quantile(v, 0.75)),
        "max": float(v.max()),
    }


def top_categories(values: np.ndarray, limit: int = TOP_CATEGORIES) -> list[tuple[str, int]]:
    counts = Counter(v for v in values if v is not None)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:limit]


def truncate_cell(text: str, width: int = CELL_WIDTH) -> str:
    flat = " ".join(text.split()).replace("|", "/")
    if len(flat) <= width:
        return flat
    return flat[: width - 2] + ".."


def render_cell(column: Column, index: int) -> str:
    v = column.values[index]
    if column.kind is ColumnKind.NUMERIC:
        if math.isnan(v):
            return "NA"
        return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else f"{v:.6g}"
    if column.kind is ColumnKind.TIMESTAMP:
        return "NA" if math.isnan(v) else format_timestamp(float(v))
    return "NA" if v is None else truncate_cell(str(v))


def render_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[j]) for r in rows)) if rows else len(h) for j, h in enumerate(headers)]
    lines = [
        "|" + "|".join(h.ljust(w) for h, w in zip(headers, widths)) + "|",
        "|" + "|".join("-" * w for w in widths) + "|",
    ]
    lines += ["|" + "|".join(c.ljust(w) for c, w in zip(r, widths)) + "|" for r in rows]
    return "\n".join(lines)


@dataclass(frozen=True)
class DatasetDigest:
    """Compact verbalization of a dataset used to ground the agents."""

    structural: tuple[tuple[str, int, str], ...]
    numeric_summary: dict[str, dict[str, float]]
    categorical_summary: dict[str, list[tuple[str, int]]]
    sample_rows: tuple[tuple[str, ...], ...]
    sample_headers: tuple[str, ...]
    rendered_text: str = field(repr=False)

    def __str__(self) -> str:
        return self.rendered_text


def _render_structural(row_count: int, structural: Sequence[tuple[str, int, str]]) -> list[str]:
    name_w = max([len("Column"), *(len(s[0]) for s in structural)]) + 2
    lines = [
        f"RangeIndex: {row_count} entries, 0 to {max(row_count - 1, 0)}",
        f"Data columns (total {len(structural)} columns):",
        f" #   {'Column'.ljust(name_w)}Non-Null Count  Dtype",
        f"---  {'------'.ljust(name_w)}--------------  -----",
    ]
    for i, (name, non_null, kind) in enumerate(structural):
        count = f"{non_null} non-null"
        lines.append(f" {str(i).ljust(3)} {name.ljust(name_w)}{count.ljust(16)}{kind}")
    tally = Counter(kind for _, _, kind in structural)
    lines.append("dtypes: " + ", ".join(f"{k}({tally[k]})" for k in sorted(tally)))
    return lines


def _render_numeric(summary: dict[str, dict[str, float]]) -> list[str]:
    stats = ("count", "mean", "std", "min", "25%", "50%", "75%", "max")
    cells = {name: [_fmt2(s[k]) for k in stats] for name, s in summary.items()}
    widths = {name: max(len(name), *(len(c) for c in cells[name])) for name in summary}
    header = " " * 5 + "".join("  " + name.rjust(widths[name]) for name in summary)
    lines = [header]
    for i, stat in enumerate(stats):
        lines.append(stat.ljust(5) + "".join("  " + cells[n][i].rjust(widths[n]) for n in summary))
    return lines


def _render_categorical(summary: dict[str, list[tuple[str, int]]]) -> list[str]:
    lines: list[str] = []
    for name, top in summary.items():
        if lines:
            lines.append("")
        lines.append(name)
        label_w = max(len(label) for label, _ in top) + 4
        count_w = max(len(str(c)) for _, c in top)
        lines += [label.ljust(label_w) + str(c).rjust(count_w) for label, c in top]
    return lines


def summarize(dataset: Dataset, sample_indices: Sequence[int] = ()) -> DatasetDigest:
    """Render the structural, numeric, categorical and sample-row views.

    Identifier-shaped columns are left out; text cells are flattened to
    one line and cut to 100 characters. Output depends only on the
    dataset and the sample indices.
    """
    for i in sample_indices:
        if not 0 <= int(i) < dataset.row_count:
            raise IndexError(f"sample index {i} out of range for {dataset.row_count} rows")
    shown = [c for c in dataset.columns if not c.identifier_like]
    structural = tuple((c.name, c.non_null_count, c.kind.value) for c in shown)
    numeric = {c.name: describe_numeric(c.values) for c in shown if c.kind is ColumnKind.NUMERIC}
    categorical = {
        c.name: top_categories(c.values)
        for c in shown
        if c.kind is ColumnKind.CATEGORICAL and c.non_null_count > 0
    }
    headers = tuple(c.name for c in shown)
    rows = tuple(tuple(render_cell(c, int(i)) for c in shown) for i in sample_indices)

    parts = _render_structural(dataset.row_count, structural)
    if numeric:
        parts += ["", "Numerical Columns Statistics:", ""] + _render_numeric(numeric)
    if categorical:
        parts += ["", "Categorical Columns Statistics:", ""] + _render_categorical(categorical)
    if rows:
        parts += ["", "Random Sample Rows:", "", render_table(headers, rows)]
    return DatasetDigest(
        structural=structural,
        numeric_summary=numeric,
        categorical_summary=categorical,
        sample_rows=rows,
        sample_headers=headers,
        rendered_text="\n".join(parts) + "\n",
    )


def render_row(dataset: Dataset, index: int, exclude: Sequence[str] = ()) -> str:
    """One observation in the digest's sample-table layout."""
    shown = [c for c in dataset.columns if not c.identifier_like and c.name not in exclude]
    return render_table([c.name for c in shown], [[render_cell(c, index) for c in shown]])


# --------------------------------------------------------------------------- sampling


@dataclass(frozen=True)
class SamplingStrategy:
    kind: str = "random"
    k: int = 5
    num_clusters: int = 5

    def __post_init__(self) -> None:
        if self.kind not in ("random", "boosting", "clustering", "none"):
            raise ValueError(f"unknown sampling strategy {self.kind!r}")
        if self.kind != "none" and self.k < 1:
            raise ValueError("sampling needs k >= 1")
        if self.kind == "clustering" and self.num_clusters < 1:
            raise ValueError("clustering needs num_clusters >= 1")

    @classmethod
    def parse(cls, text: str) -> SamplingStrategy:
        """Parse ``random``, ``random:5``, ``boosting:5``, ``clustering:5:3`` or ``none``."""
        parts = text.strip().split(":")
        kind = parts[0]
        k = int(parts[1]) if len(parts) > 1 else 5
        clusters = int(parts[2]) if len(parts) > 2 else k
        return cls(kind=kind, k=k, num_clusters=clusters)

    def __str__(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "clustering":
            return f"clustering:{self.k}:{self.num_clusters}"
        return f"{self.kind}:{self.k}"


def kmeans(points: np.ndarray, num_clusters: int, rng: np.random.Generator, max_iter: int = 50) -> np.ndarray:
    """Lloyd's algorithm seeded with distinct random rows; returns labels."""
    pts = np.asarray(points, dtype=float)
    k = min(num_clusters, pts.shape[0])
    centers = pts[rng.choice(pts.shape[0], size=k, replace=False)].copy()
    labels = np.full(pts.shape[0], -1)
    for _ in range(max_iter):
        dist = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = pts[labels == c]
            if members.size:
                centers[c] = members.mean(axis=0)
    return labels


def sample_observations(
    dataset: Dataset,
    strategy: SamplingStrategy,
    rng_seed: int,
    aux: np.ndarray | None = None,
) -> list[int]:
    """Pick rows for the digest's sample table.

    ``aux`` holds per-row error weights for boosting or per-row embedding
    vectors for clustering.
    """
    n = dataset.row_count
    if strategy.kind == "none" or n == 0:
        return []
    rng = np.random.default_rng(rng_seed)
    k = min(strategy.k, n)
    if strategy.kind == "boosting":
        if aux is None:
            raise ValueError("boosting needs per-row error weights")
        w = np.asarray(aux, dtype=float)
        if w.shape != (n,) or (w < 0).any() or np.isnan(w).any():
            raise ValueError("boosting weights must be non-negative, one per row")
        if w.sum() == 0:
            logger.warning("boosting weights are all zero; falling back to random sampling")
            return sorted(int(i) for i in rng.choice(n, size=k, replace=False))
        nonzero = int(np.count_nonzero(w))
        picked = list(rng.choice(n, size=min(k, nonzero), replace=False, p=w / w.sum()))
        if len(picked) < k:
            rest = np.setdiff1d(np.arange(n), picked)
            picked += list(rng.choice(rest, size=k - len(picked), replace=False))
        return sorted(int(i) for i in picked)
    if strategy.kind == "clustering":
        if aux is None:
            raise ValueError("clustering needs per-row embeddings")
        emb = np.asarray(aux, dtype=float)
        if emb.ndim != 2 or emb.shape[0] != n:
            raise ValueError("clustering embeddings must have one row per observation")
        labels = kmeans(emb, strategy.num_clusters, rng)
        pools = [list(rng.permutation(np.flatnonzero(labels == c))) for c in range(labels.max() + 1)]
        picked: list[int] = []
        while len(picked) < k:
            for pool in pools:
                if pool and len(picked) < k:
                    picked.append(int(pool.pop(0)))
        return sorted(picked)
    return sorted(int(i) for i in rng.choice(n, size=k, replace=False))


def holdout_split(dataset: Dataset, test_fraction: float, rng_seed: int) -> tuple[Dataset, Dataset]:
    """Random disjoint (train, test) split; rows keep their original order."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = dataset.row_count
    if n < 4:
        raise ValueError("holdout_split needs at least 4 rows")
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    perm = np.random.default_rng(rng_seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return dataset.take(train_idx), dataset.take(test_idx)


def split_indices(n: int, test_fraction: float, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    perm = np.random.default_rng(rng_seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])
