"""Byte-pair encoding with the ``@@`` continuation-suffix convention."""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["MergeTable", "bpe_learn", "bpe_apply", "bpe_decode", "bpe_apply_sentence",
           "MARKER"]

MARKER = "@@"
HEADER = "#bpe-v1"


@dataclass
class MergeTable:
    merges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.ranks = {}
        for i, pair in enumerate(self.merges):
            if pair in self.ranks:
                raise ValueError(f"duplicate merge {pair}")
            self.ranks[pair] = i

    def __len__(self):
        return len(self.merges)

    def symbols(self) -> set[str]:
        return {a + b for a, b in self.merges}

    def save(self, path):
        lines = [f"{HEADER} {len(self.merges)}"] + [f"{a} {b}" for a, b in self.merges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MergeTable":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith(HEADER):
            raise ValueError(f"{path}: missing '{HEADER}' header")
        count = int(lines[0].split()[1])
        merges = []
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split(" ")
            if len(parts) != 2 or not all(parts):
                raise ValueError(f"{path}:{lineno}: expected 'a b'")
            merges.append((parts[0], parts[1]))
        if len(merges) != count:
            raise ValueError(f"{path}: header says {count} merges, found {len(merges)}")
        return cls(merges)


def _merge_word(symbols: tuple, pair: tuple[str, str]) -> tuple:
    a, b = pair
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def bpe_learn(word_freqs: dict[str, int], n_merges: int) -> MergeTable:
    """Learn up to ``n_merges`` merges.

    Each step merges the most frequent adjacent symbol pair; ties go to the
    lexicographically smaller pair.
    """
    if n_merges < 0:
        raise ValueError("n_merges must be >= 0")
    vocab = Counter()
    for word, freq in word_freqs.items():
        if word and freq > 0:
            vocab[tuple(word)] += freq
    pair_counts: Counter = Counter()
    where: dict[tuple, set] = {}
    for word, freq in vocab.items():
        for pair in zip(word, word[1:]):
            pair_counts[pair] += freq
            where.setdefault(pair, set()).add(word)
    merges = []
    while len(merges) < n_merges:
        live = [(c, p) for p, c in pair_counts.items() if c > 0]
        if not live:
            break
        best_count = max(c for c, _ in live)
        best = min(p for c, p in live if c == best_count)
        merges.append(best)
        for word in sorted(where.get(best, ())):
            freq = vocab.pop(word, 0)
            if not freq:
                continue
            for pair in zip(word, word[1:]):
                pair_counts[pair] -= freq
            new = _merge_word(word, best)
            vocab[new] += freq
            for pair in zip(new, new[1:]):
                pair_counts[pair] += freq
                where.setdefault(pair, set()).add(new)
        where.pop(best, None)
        pair_counts.pop(best, None)
    return MergeTable(merges)


def _segment(token: str, table: MergeTable) -> list[str]:
    symbols = tuple(token)
    last_rank = -1
    while len(symbols) > 1:
        candidates = [table.ranks[p] for p in zip(symbols, symbols[1:])
                      if table.ranks.get(p, -1) > last_rank]
        if not candidates:
            break
        last_rank = min(candidates)
        symbols = _merge_word(symbols, table.merges[last_rank])
    return list(symbols)


def bpe_apply(token: str, table: MergeTable) -> list[str]:
    """Replay the merges on ``token``; all pieces but the last carry ``@@``."""
    if not token:
        raise ValueError("cannot segment an empty token")
    pieces = _segment(token, table)
    return [p + MARKER for p in pieces[:-1]] + [pieces[-1]]


def bpe_apply_sentence(tokens: list[str], table: MergeTable) -> list[str]:
    out = []
    for tok in tokens:
        out.extend(bpe_apply(tok, table))
    return out


def bpe_decode(pieces: list[str]) -> list[str]:
    """Glue ``@@``-suffixed pieces onto their successor."""
    tokens = []
    buf = ""
    for piece in pieces:
        if piece.endswith(MARKER):
            buf += piece[: -len(MARKER)]
        else:
            tokens.append(buf + piece)
            buf = ""
    if buf:
        warnings.warn("dangling continuation marker at end of sequence; marker stripped")
        tokens.append(buf)
    return tokens
