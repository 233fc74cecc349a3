"""Per-row semantic labeling by an LLM judge, with caching and strict parsing."""

from __future__ import annotations

import hashlib
import json
import logging
import string
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dataset import ColumnKind, Dataset
from .features.spec import AnnotationJob, FeatureSpec
from .llm import ChatExchange, GatewayError, ImageAttachment, Message
from .prompting import render

logger = logging.getLogger(__name__)

NULL_RATE_WARNING = 0.20
_STRIP = string.whitespace + string.punctuation + "“”‘’"
_MEDIA_TYPES = {
    ".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg", ".gif": "image/gif",
    ".bmp": "image/bmp", ".webp": "image/webp", ".tif": "image/tiff", ".tiff": "image/tiff",
}


class AnnotationError(RuntimeError):
    def __init__(self, feature: str, failed_rows: Sequence[int], cause: str):
        self.failed_rows = list(failed_rows)
        shown = self.failed_rows[:20]
        more = "" if len(self.failed_rows) <= 20 else f" (+{len(self.failed_rows) - 20} more)"
        super().__init__(f"annotating {feature!r} failed for rows {shown}{more}: {cause}")


@dataclass(frozen=True)
class AnnotationResult:
    labels: tuple[str | None, ...]
    warnings: tuple[str, ...] = ()
    gateway_calls: int = 0

    @property
    def null_rate(self) -> float:
        if not self.labels:
            return 0.0
        return sum(lab is None for lab in self.labels) / len(self.labels)


def parse_label(response: str, labels: Sequence[str]) -> str | None:
    """Match a reply against the allowed labels.

    Surrounding whitespace, punctuation and quotes are trimmed and case is
    folded; anything other than an exact match returns None.
    """
    cleaned = response.strip(_STRIP).casefold()
    for label in labels:
        if cleaned == label.strip(_STRIP).casefold():
            return label
    return None


def label_set_hash(labels: Sequence[str]) -> str:
    return hashlib.sha256(json.dumps(sorted(labels)).encode("utf-8")).hexdigest()[:16]


def content_hash(content: str) -> str:
    return hashlib.sha256(content.encode("utf-8")).hexdigest()


class AnnotationCache:
    """Labels keyed by (content hash, feature name, label-set hash).

    With a path, entries are loaded from and appended to a JSONL file.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[tuple[str, str, str], str | None] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._entries[(rec["content"], rec["feature"], rec["labels"])] = rec["label"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: tuple[str, str, str]) -> tuple[bool, str | None]:
        with self._lock:
            if key in self._entries:
                return True, self._entries[key]
            return False, None

    def put_many(self, items: Sequence[tuple[tuple[str, str, str], str | None]]) -> None:
        with self._lock:
            fresh = [(k, v) for k, v in items if k not in self._entries]
            for k, v in fresh:
                self._entries[k] = v
            if self.path is not None and fresh:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    for (c, f, lab), v in fresh:
                        fh.write(json.dumps({"content": c, "feature": f, "labels": lab, "label": v},
                                            sort_keys=True) + "\n")


class Annotator:
    """Labels a text or image column with an llm-mode FeatureSpec."""

    def __init__(
        self,
        gateway,
        model: str = "annotator",
        temperature: float = 0.0,
        cache: AnnotationCache | None = None,
        max_workers: int = 8,
        image_root: str | Path | None = None,
    ):
        self.gateway = gateway
        self.model = model
        self.temperature = temperature
        self.cache = cache if cache is not None else AnnotationCache()
        self.max_workers = max_workers
        self.image_root = Path(image_root) if image_root is not None else None

    def build_exchange(self, feature: FeatureSpec, content: str, kind: ColumnKind) -> ChatExchange:
        context = {"feature": feature.name, "description": feature.description, "labels": list(feature.labels)}
        if kind is ColumnKind.IMAGE_PATH:
            path = self._image_path(content)
            media = _MEDIA_TYPES.get(path.suffix.lower(), "application/octet-stream")
            messages = (
                Message("system", render("annotate_visual_system")),
                Message("user", render("annotate_visual_user", path=content, **context),
                        images=(ImageAttachment(str(path), media),)),
            )
        else:
            messages = (
                Message("system", render("annotate_text_system")),
                Message("user", render("annotate_text_user", text=content, **context)),
            )
        return ChatExchange(messages, model=self.model, temperature=self.temperature, max_output_tokens=32)

    def _image_path(self, content: str) -> Path:
        path = Path(content)
        return self.image_root / path if self.image_root is not None and not path.is_absolute() else path

    def _label_one(self, feature: FeatureSpec, content: str, kind: ColumnKind) -> tuple[str | None, int]:
        exchange = self.build_exchange(feature, content, kind)
        reply = self.gateway.complete(exchange).text
        label = parse_label(reply, feature.labels)
        if label is not None:
            return label, 1
        retry = exchange.with_message(Message("assistant", reply)).with_message(
            Message("user", render("annotate_reminder", labels=list(feature.labels)))
        )
        return parse_label(self.gateway.complete(retry).text, feature.labels), 2

    def annotate(self, job: AnnotationJob, dataset: Dataset) -> AnnotationResult:
        feature = job.feature
        source = feature.source_columns[0]
        column = dataset.column(source)
        if column.kind not in (ColumnKind.TEXT, ColumnKind.CATEGORICAL, ColumnKind.IMAGE_PATH):
            raise ValueError(f"cannot annotate {column.kind.value} column {source!r}")
        rows = list(job.rows) if job.rows is not None else list(range(dataset.row_count))
        lab_hash = label_set_hash(feature.labels)
        warnings: list[str] = []
        labels: dict[int, str | None] = {}
        pending: dict[tuple[str, str, str], list[int]] = {}
        contents: dict[tuple[str, str, str], str] = {}
        for r in rows:
            value = column.values[r]
            if value is None:
                labels[r] = None
                continue
            if column.kind is ColumnKind.IMAGE_PATH and not self._image_path(value).exists():
                labels[r] = None
                warnings.append(f"row {r}: image {value!r} not found")
                continue
            key = (content_hash(job.cache_prefix + value), feature.name, lab_hash)
            hit, cached = self.cache.get(key)
            if hit:
                labels[r] = cached
            else:
                pending.setdefault(key, []).append(r)
                contents[key] = value

        calls = 0
        failed: list[int] = []
        errors: list[str] = []
        if pending:
            keys = list(pending)
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                futures = [pool.submit(self._label_one, feature, contents[k], column.kind) for k in keys]
                answers: list[tuple[str | None, int] | None] = []
                for key, fut in zip(keys, futures):
                    try:
                        answers.append(fut.result())
                    except GatewayError as exc:
                        answers.append(None)
                        failed += pending[key]
                        errors.append(str(exc))
            if failed:
                raise AnnotationError(feature.name, sorted(failed), errors[0])
            fresh = []
            for key, ans in zip(keys, answers):
                label, n_calls = ans
                calls += n_calls
                fresh.append((key, label))
                for r in pending[key]:
                    labels[r] = label
            self.cache.put_many(fresh)

        result_labels = tuple(labels.get(r) for r in range(dataset.row_count)) if job.rows is None \
            else tuple(labels[r] for r in rows)
        null_rate = sum(lab is None for lab in result_labels) / max(len(result_labels), 1)
        if null_rate > NULL_RATE_WARNING:
            warnings.append(f"{feature.name}: {null_rate:.0%} of rows got no valid label")
        for w in warnings:
            logger.warning("annotate: %s", w)
        return AnnotationResult(labels=result_labels, warnings=tuple(warnings), gateway_calls=calls)


def inject_label_noise(labels: Sequence[Any], flip_rate: float, rng_seed: int) -> list[Any]:
    """Flip each non-null binary label independently with ``flip_rate``."""
    if not 0.0 <= flip_rate <= 0.5:
        raise ValueError(f"flip_rate must lie in [0, 0.5], got {flip_rate}")
    levels = sorted({lab for lab in labels if lab is not None}, key=str)
    if len(levels) != 2:
        raise ValueError(f"label noise needs a binary label set, found {levels}")
    other = {levels[0]: levels[1], levels[1]: levels[0]}
    flips = np.random.default_rng(rng_seed).random(len(labels)) < flip_rate
    return [other[lab] if lab is not None and flip else lab for lab, flip in zip(labels, flips)]


def agreement_f1(predicted: Sequence[Any], gold: Sequence[Any], positive_label: Any) -> float:
    """F1 of ``predicted`` against ``gold`` on ``positive_label``; pairs with a null are skipped."""
    if len(predicted) != len(gold):
        raise ValueError("predicted and gold differ in length")
    pairs = [(p, g) for p, g in zip(predicted, gold) if p is not None and g is not None]
    tp = sum(p == positive_label and g == positive_label for p, g in pairs)
    fp = sum(p == positive_label and g != positive_label for p, g in pairs)
    fn = sum(p != positive_label and g == positive_label for p, g in pairs)
    if tp + fn == 0:
        raise ValueError(f"no gold labels equal {positive_label!r}; F1 is undefined")
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)
