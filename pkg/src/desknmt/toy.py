"""Synthetic corpora for the desk-scale experiments."""

from __future__ import annotations

import random

__all__ = ["words", "copy_corpus", "mapped_corpus", "case_corpus", "politeness_corpus",
           "post_edit_corpus", "ENDINGS"]


def words(vocab_size: int, prefix: str = "w") -> list[str]:
    return [f"{prefix}{i}" for i in range(vocab_size)]


def copy_corpus(n: int, vocab_size: int = 20, min_len: int = 3, max_len: int = 10,
                seed: int = 0) -> list[list[str]]:
    rng = random.Random(seed)
    vocab = words(vocab_size)
    return [[rng.choice(vocab) for _ in range(rng.randint(min_len, max_len))] for _ in range(n)]


def mapped_corpus(sources, mapping: dict[str, str]):
    """Word-by-word translation through ``mapping``; unmapped words copy."""
    return [(s, [mapping.get(w, w) for w in s]) for s in sources]


def case_corpus(n: int, vocab_size: int = 30, min_len: int = 3, max_len: int = 8,
                seed: int = 0, acronyms: int = 4):
    """Cased source/target pairs where casing must cross over.

    Target words are ``t<i>`` for source ``s<i>``.  The first word is
    capitalized; a few words are acronyms written in upper case; other words
    are randomly capitalized with probability 0.2 (names).
    """
    rng = random.Random(seed)
    src_words = [f"s{chr(97 + i % 26)}{i}" for i in range(vocab_size)]
    tgt_words = [f"t{chr(97 + i % 26)}{i}" for i in range(vocab_size)]
    pairs = []
    for _ in range(n):
        idx = [rng.randrange(vocab_size) for _ in range(rng.randint(min_len, max_len))]
        src, tgt = [], []
        for pos, i in enumerate(idx):
            if i < acronyms:
                style = str.upper
            elif pos == 0 or rng.random() < 0.2:
                style = str.capitalize
            else:
                style = str.lower
            src.append(style(src_words[i]))
            tgt.append(style(tgt_words[i]))
        pairs.append((src, tgt))
    return pairs


ENDINGS = {"formal": "yo", "informal": "ya"}


def politeness_corpus(n: int, vocab_size: int = 20, seed: int = 0, min_len: int = 2,
                      max_len: int = 7):
    """Copy-style pairs whose target ends with a register-dependent verb ending."""
    rng = random.Random(seed)
    out = []
    for sent in copy_corpus(n, vocab_size, min_len, max_len, seed=seed + 1):
        mode = rng.choice(sorted(ENDINGS))
        out.append((sent, sent + [ENDINGS[mode]], mode))
    return out


def post_edit_corpus(n: int, vocab_size: int = 20, seed: int = 0, noise: float = 0.3,
                     min_len: int = 3, max_len: int = 8):
    """(source, mt hypothesis, post-edited reference) triples.

    The reference is the source mapped word by word; the hypothesis is the
    reference with a fraction of words replaced at random, so fixing it needs
    the source.
    """
    rng = random.Random(seed)
    tgt_vocab = words(vocab_size, "t")
    triples = []
    for src in copy_corpus(n, vocab_size, min_len, max_len, seed=seed + 1):
        ref = ["t" + w[1:] for w in src]
        hyp = [rng.choice(tgt_vocab) if rng.random() < noise else w for w in ref]
        triples.append((src, hyp, ref))
    return triples
