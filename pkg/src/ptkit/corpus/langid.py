"""Character n-gram language identification.

A multinomial model over hashed character 1/2/3-grams with additive smoothing.
Small enough to train on a desk-scale labeled corpus in seconds, deterministic
given the (order-independent) corpus counts.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ..errors import EmptyCorpus, EmptyText, SingleLabel

NGRAM_ORDERS = (1, 2, 3)
DEFAULT_HASH_SPACE = 1 << 18


def _hash_gram(gram: str, hash_space: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % hash_space


def _gram_counts(text: str, hash_space: int) -> Counter:
    counts: Counter = Counter()
    for n in NGRAM_ORDERS:
        for i in range(len(text) - n + 1):
            counts[_hash_gram(text[i : i + n], hash_space)] += 1
    return counts


@dataclass
class LangIdModel:
    labels: list[str]
    log_feature_probs: np.ndarray  # (labels, hash_space)
    log_priors: np.ndarray  # (labels,)
    hash_space: int

    def save(self, path: str | Path) -> None:
        np.savez_compressed(
            path,
            labels=np.array(self.labels, dtype=object),
            log_feature_probs=self.log_feature_probs,
            log_priors=self.log_priors,
            hash_space=np.array(self.hash_space),
        )

    @classmethod
    def load(cls, path: str | Path) -> "LangIdModel":
        with np.load(path, allow_pickle=True) as data:
            return cls(
                labels=[str(x) for x in data["labels"]],
                log_feature_probs=np.asarray(data["log_feature_probs"], dtype=np.float64),
                log_priors=np.asarray(data["log_priors"], dtype=np.float64),
                hash_space=int(data["hash_space"]),
            )


def train_langid(
    corpus: Iterable[tuple[str, str]],
    hash_space: int = DEFAULT_HASH_SPACE,
    alpha: float = 1.0,
) -> LangIdModel:
    """Estimate smoothed per-label n-gram frequencies from (text, label) pairs."""
    docs = [(text, label) for text, label in corpus]
    if not docs:
        raise EmptyCorpus("no labeled documents provided")
    labels = sorted({label for _, label in docs})
    if len(labels) < 2:
        raise SingleLabel(f"need at least two labels, got {labels}")
    index = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), hash_space), dtype=np.float64)
    doc_counts = np.zeros(len(labels), dtype=np.float64)
    for text, label in docs:
        row = index[label]
        doc_counts[row] += 1
        for gram, c in _gram_counts(text, hash_space).items():
            counts[row, gram] += c
    totals = counts.sum(axis=1, keepdims=True)
    log_feature_probs = np.log(counts + alpha) - np.log(totals + alpha * hash_space)
    log_priors = np.log(doc_counts + 1.0) - np.log(doc_counts.sum() + len(labels))
    return LangIdModel(labels, log_feature_probs, log_priors, hash_space)


def predict_lang(model: LangIdModel, text: str) -> tuple[str, float]:
    """Most likely label with its softmax-normalized confidence."""
    if not text:
        raise EmptyText("cannot classify empty text")
    counts = _gram_counts(text, model.hash_space)
    scores = model.log_priors.copy()
    if counts:
        idx = np.fromiter(counts.keys(), dtype=np.int64, count=len(counts))
        c = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
        scores = scores + model.log_feature_probs[:, idx] @ c
    shifted = scores - scores.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    best = int(np.argmax(scores))
    return model.labels[best], float(probs[best])
