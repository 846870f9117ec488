"""BLEU-4 over whitespace tokens, and perplexity."""

from __future__ import annotations

import math
from collections import Counter

__all__ = ["bleu", "sentence_bleu", "ngram_stats", "BleuStats"]


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _split(x):
    return x.split() if isinstance(x, str) else list(x)


class BleuStats:
    def __init__(self, max_n: int = 4):
        self.max_n = max_n
        self.matches = [0] * max_n
        self.totals = [0] * max_n
        self.hyp_len = 0
        self.ref_len = 0

    def add(self, hyp, ref):
        self.hyp_len += len(hyp)
        self.ref_len += len(ref)
        for n in range(1, self.max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            self.matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            self.totals[n - 1] += max(len(hyp) - n + 1, 0)

    def precisions(self, smooth: int = 0) -> list[float]:
        out = []
        for m, t in zip(self.matches, self.totals):
            if t + smooth == 0:
                out.append(0.0)
            else:
                out.append((m + smooth) / (t + smooth))
        return out

    def brevity_penalty(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        if self.hyp_len >= self.ref_len:
            return 1.0
        return math.exp(1 - self.ref_len / self.hyp_len)

    def score(self, smooth: int = 0) -> float:
        precisions = self.precisions(smooth)
        if min(precisions) <= 0:
            return 0.0
        log_mean = sum(math.log(p) for p in precisions) / self.max_n
        return 100.0 * self.brevity_penalty() * math.exp(log_mean)


def ngram_stats(hypotheses, references, lowercase: bool = False, max_n: int = 4) -> BleuStats:
    hypotheses, references = list(hypotheses), list(references)
    if not hypotheses:
        raise ValueError("empty hypothesis set")
    if len(hypotheses) != len(references):
        raise ValueError(f"line count mismatch: {len(hypotheses)} hypotheses vs {len(references)} references")
    stats = BleuStats(max_n)
    for h, r in zip(hypotheses, references):
        h, r = _split(h), _split(r)
        if lowercase:
            h, r = [t.lower() for t in h], [t.lower() for t in r]
        stats.add(h, r)
    return stats


def bleu(hypotheses, references, lowercase: bool = False) -> float:
    """Corpus BLEU-4 in [0, 100] with brevity penalty; lines are token lists or
    whitespace-separated strings."""
    return ngram_stats(hypotheses, references, lowercase).score()


def sentence_bleu(hypothesis, reference, lowercase: bool = False) -> float:
    """Add-one smoothed sentence BLEU (used to pick distillation targets)."""
    return ngram_stats([hypothesis], [reference], lowercase).score(smooth=1)
