"""Byte-pair encoding with merge-time dropout.

Training is standard frequency-greedy pair merging over whitespace-delimited
words. Tokenization repeatedly applies the lowest-rank applicable merge; with
dropout, every candidate merge occurrence is independently skipped for the
current pass with probability ``p``, and a pass whose candidates were all
skipped finalizes the word. Whitespace runs pass through as tokens, so the
concatenated output always reproduces the input byte-for-byte.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import EmptyCorpus

_SEGMENT_RE = re.compile(r"(\s+)")


@dataclass
class BpeModel:
    merges: list[tuple[str, str]]
    alphabet: set[str] = field(default_factory=set)

    def __post_init__(self):
        self.ranks = {pair: rank for rank, pair in enumerate(self.merges)}


def learn_bpe(corpus: str, target_merges: int) -> BpeModel:
    """Greedy pair merging; ties broken by lexicographically smaller pair.

    Stops after ``target_merges`` merges or once no pair occurs twice.
    """
    words = corpus.split()
    if not words:
        raise EmptyCorpus("corpus contains no words")
    if target_merges < 0:
        raise ValueError("target_merges must be non-negative")
    word_freq = Counter(words)
    symbols = {word: list(word) for word in word_freq}
    alphabet = {ch for word in word_freq for ch in word}
    merges: list[tuple[str, str]] = []
    while len(merges) < target_merges:
        pair_counts: Counter = Counter()
        for word, freq in word_freq.items():
            syms = symbols[word]
            for i in range(len(syms) - 1):
                pair_counts[(syms[i], syms[i + 1])] += freq
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        best = min(pair for pair, c in pair_counts.items() if c == best_count)
        merges.append(best)
        for word in symbols:
            symbols[word] = _apply_merge(symbols[word], best)
    return BpeModel(merges, alphabet)


def _apply_merge(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    # Merge non-overlapping occurrences left to right.
    out = []
    i = 0
    merged = pair[0] + pair[1]
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def _drop_uniform(seed: int, word_index: int, pass_index: int, position: int) -> float:
    digest = hashlib.blake2b(
        f"{seed}\x1f{word_index}\x1f{pass_index}\x1f{position}".encode("utf-8"),
        digest_size=8,
    ).digest()
    return int.from_bytes(digest, "big") / 2.0**64


def _encode_word(
    word: str, model: BpeModel, dropout_p: float, seed: int, word_index: int
) -> list[str]:
    symbols = list(word)
    if len(symbols) < 2:
        return symbols
    ranks = model.ranks
    pass_index = 0
    while True:
        candidates = []
        for i in range(len(symbols) - 1):
            pair = (symbols[i], symbols[i + 1])
            rank = ranks.get(pair)
            if rank is None:
                continue
            if dropout_p > 0.0 and _drop_uniform(seed, word_index, pass_index, i) < dropout_p:
                continue
            candidates.append((rank, i))
        if not candidates:
            return symbols
        best_rank = min(rank for rank, _ in candidates)
        positions = [i for rank, i in candidates if rank == best_rank]
        pair = model.merges[best_rank]
        out = []
        cursor = 0
        for pos in positions:
            if pos < cursor:
                continue  # overlapping occurrence already consumed
            out.extend(symbols[cursor:pos])
            out.append(pair[0] + pair[1])
            cursor = pos + 2
        out.extend(symbols[cursor:])
        symbols = out
        if len(symbols) < 2:
            return symbols
        pass_index += 1


def tokenize_bpe(
    model: BpeModel, text: str, dropout_p: float = 0.0, seed: int = 0
) -> list[str]:
    """Segment ``text``; ``dropout_p=0`` is deterministic greedy BPE and
    ``dropout_p=1`` falls all the way back to characters."""
    if not (0.0 <= dropout_p <= 1.0):
        raise ValueError(f"dropout_p must be in [0, 1], got {dropout_p}")
    tokens: list[str] = []
    word_index = 0
    for segment in _SEGMENT_RE.split(text):
        if not segment:
            continue
        if segment.isspace():
            tokens.append(segment)
            continue
        tokens.extend(_encode_word(segment, model, dropout_p, seed, word_index))
        word_index += 1
    return tokens


def save_bpe_model(model: BpeModel, path: str | Path) -> None:
    """One ranked ``left right`` pair per line; symbols never contain whitespace."""
    lines = [f"{left} {right}" for left, right in model.merges]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_bpe_model(path: str | Path) -> BpeModel:
    merges = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        left, sep, right = line.partition(" ")
        if not sep or not left or not right:
            raise ValueError(f"malformed merge line: {line!r}")
        merges.append((left, right))
    alphabet = {ch for pair in merges for sym in pair for ch in sym}
    return BpeModel(merges, alphabet)
