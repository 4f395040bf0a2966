"""Streaming document filtering by predicted language and metadata agreement."""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .langid import LangIdModel, predict_lang

_TAG_RE = re.compile(r"<[^>]*>")


def strip_markup(text: str) -> str:
    """Default pre-filter hook: drop HTML-style tags, collapse the whitespace."""
    return re.sub(r"\s+", " ", _TAG_RE.sub(" ", text)).strip()


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    metadata_lang: str | None = None


# Drop reasons, in the order the checks run.
REASON_MALFORMED = "malformed"
REASON_LANGUAGE = "language"
REASON_CONFIDENCE = "low_confidence"
REASON_METADATA = "metadata_mismatch"

DROP_REASONS = (REASON_MALFORMED, REASON_LANGUAGE, REASON_CONFIDENCE, REASON_METADATA)


@dataclass
class FilterStats:
    total: int = 0
    retained: int = 0
    dropped: dict[str, int] = field(
        default_factory=lambda: {reason: 0 for reason in DROP_REASONS}
    )

    def to_dict(self) -> dict:
        return {"total": self.total, "retained": self.retained, "dropped": dict(self.dropped)}


def filter_docs(
    stream: Iterable[Document],
    langset: set[str],
    model: LangIdModel,
    tau: float,
    check_classifier: bool = True,
    check_metadata: bool = True,
    preprocess: Callable[[str], str] | None = strip_markup,
    jobs: int = 1,
) -> tuple[list[Document], FilterStats]:
    """Retain documents whose predicted language is in ``langset`` with
    confidence at least ``tau`` and whose metadata code, when present, agrees
    with the prediction. Either check can be disabled. Malformed documents
    (empty after preprocessing) are counted and skipped, never raised.

    Documents are independent; with ``jobs > 1`` they are classified on a
    thread pool with the input order restored, so the output is identical for
    any worker count.
    """
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f"tau must be in [0, 1], got {tau}")

    def decide(doc: Document) -> tuple[Document | None, str | None]:
        text = doc.text or ""
        if preprocess is not None:
            text = preprocess(text)
        if not text:
            return None, REASON_MALFORMED
        predicted, confidence = predict_lang(model, text)
        if check_classifier:
            if predicted not in langset:
                return None, REASON_LANGUAGE
            if confidence < tau:
                return None, REASON_CONFIDENCE
        if check_metadata and doc.metadata_lang is not None and doc.metadata_lang != predicted:
            return None, REASON_METADATA
        return Document(doc.id, text, doc.metadata_lang), None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(decide, stream))
    else:
        outcomes = [decide(doc) for doc in stream]

    retained: list[Document] = []
    stats = FilterStats()
    for kept, reason in outcomes:
        stats.total += 1
        if kept is None:
            stats.dropped[reason] += 1
        else:
            retained.append(kept)
            stats.retained += 1
    return retained, stats
