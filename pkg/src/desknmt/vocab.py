"""Vocabularies with a fixed reserved-id layout, plus word-feature specs.

Ids: 0 padding, 1 ``<unk>``, 2 ``<s>``, 3 ``</s>``, then control tokens, then
placeholder tokens, then words by descending frequency (ties alphabetical).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["Vocab", "FeatureSpec", "CASE_FEATURE", "PAD", "UNK", "BOS", "EOS",
           "SPECIALS", "POLITENESS_MODES", "SEPARATOR", "control_token",
           "feature_vector"]

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<blank>", "<unk>", "<s>", "</s>")
POLITENESS_MODES = ("formal", "informal", "neutral")
SEPARATOR = "⟦sep⟧"


def control_token(mode: str) -> str:
    return f"⟦polite:{mode}⟧"


CONTROL_TOKENS = tuple(control_token(m) for m in POLITENESS_MODES) + (SEPARATOR,)


class Vocab:
    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def build(cls, sentences, max_size: int | None = None, controls=(), placeholders=(),
              min_freq: int = 1) -> "Vocab":
        counts = Counter(tok for sent in sentences for tok in sent)
        reserved = list(controls) + list(placeholders)
        words = sorted((w for w, c in counts.items()
                        if c >= min_freq and w not in SPECIALS and w not in reserved),
                       key=lambda w: (-counts[w], w))
        if max_size is not None:
            words = words[: max(0, max_size - len(SPECIALS) - len(reserved))]
        return cls(list(SPECIALS) + reserved + words)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode(self, tokens) -> list[int]:
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.tokens[4:]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(list(SPECIALS) + lines)


@dataclass(frozen=True)
class FeatureSpec:
    """A discrete word feature; ``default`` labels positions with no word (``<s>``)."""

    name: str
    values: tuple[str, ...]
    default: str

    @property
    def n(self) -> int:
        return len(self.values)

    def index(self, value) -> int:
        value = getattr(value, "value", value)
        return self.values.index(value)


CASE_FEATURE = FeatureSpec("case", ("L", "C", "U", "M", "N"), "N")


def feature_vector(n_f: int, index, dtype=np.float32) -> np.ndarray:
    """Normalised one-hot: ``1/n_f`` at ``index``, 0 elsewhere.  ``index`` may be an array."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= n_f):
        raise IndexError(f"feature value out of range for n_f={n_f}")
    out = np.zeros(index.shape + (n_f,), dtype=dtype)
    np.put_along_axis(out, index[..., None], dtype(1.0 / n_f), axis=-1)
    return out
