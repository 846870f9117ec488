"""IBM Model 1 word alignment with a diagonal preference.

The alignment prior for target position ``t`` over source positions ``s`` is
proportional to ``exp(-lam * |s/S - t/T|)``; ``lam = 0`` gives plain Model 1.
Alignments are exchanged as Pharaoh lines and stored as CCS matrices whose
dense view is the T x S guided-alignment target.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compression import SparseCCS

__all__ = ["TranslationTable", "AlignmentMatrix", "ibm1_train", "viterbi_align",
           "align_corpus", "diagonal_prior", "read_pharaoh", "write_pharaoh",
           "PharaohParseError"]

DEFAULT_DIAGONAL_STRENGTH = 4.0


class PharaohParseError(ValueError):
    pass


@dataclass
class TranslationTable:
    """Sparse t(target | source)."""

    probs: dict[str, dict[str, float]] = field(default_factory=dict)
    log_likelihoods: list[float] = field(default_factory=list)

    def __call__(self, src: str, tgt: str) -> float:
        return self.probs.get(src, {}).get(tgt, 0.0)


def diagonal_prior(S: int, T: int, lam: float) -> np.ndarray:
    """Row-normalised T x S prior matrix."""
    s = np.arange(S) / S
    t = np.arange(T) / T
    w = np.exp(-lam * np.abs(s[None, :] - t[:, None]))
    return w / w.sum(axis=1, keepdims=True)


def _pairs(corpus):
    for src, tgt in corpus:
        if src and tgt:
            yield list(src), list(tgt)


def ibm1_train(corpus, iterations: int = 5,
               diagonal_strength: float = DEFAULT_DIAGONAL_STRENGTH) -> TranslationTable:
    """EM training; empty sentence pairs are skipped.

    The training log-likelihood before each update is appended to
    ``table.log_likelihoods``.
    """
    pairs = list(_pairs(corpus))
    if not pairs:
        raise ValueError("no non-empty sentence pairs to align")
    cooc: dict[str, set] = defaultdict(set)
    for src, tgt in pairs:
        for e in src:
            cooc[e].update(tgt)
    probs = {e: {f: 1.0 / len(fs) for f in sorted(fs)} for e, fs in sorted(cooc.items())}
    table = TranslationTable(probs)
    priors = {}
    for _ in range(iterations):
        counts: dict[str, dict[str, float]] = defaultdict(lambda: defaultdict(float))
        ll = 0.0
        for src, tgt in pairs:
            key = (len(src), len(tgt))
            if key not in priors:
                priors[key] = diagonal_prior(len(src), len(tgt), diagonal_strength)
            prior = priors[key]
            lex = np.array([[probs[e].get(f, 0.0) for e in src] for f in tgt])
            joint = prior * lex
            z = joint.sum(axis=1)
            ll += float(np.log(z).sum())
            post = joint / z[:, None]
            for ti, f in enumerate(tgt):
                row = post[ti]
                for si, e in enumerate(src):
                    counts[e][f] += row[si]
        table.log_likelihoods.append(ll)
        probs = {}
        for e in sorted(counts):
            fs = counts[e]
            total = math.fsum(fs.values())
            probs[e] = {f: c / total for f, c in sorted(fs.items())}
        table.probs = probs
    return table


@dataclass(frozen=True)
class AlignmentMatrix:
    S: int
    T: int
    links: frozenset  # of (s, t)

    def __post_init__(self):
        for s, t in self.links:
            if not (0 <= s < self.S and 0 <= t < self.T):
                raise ValueError(f"link {s}-{t} out of range for S={self.S}, T={self.T}")

    @classmethod
    def from_links(cls, links, S: int, T: int) -> "AlignmentMatrix":
        return cls(S, T, frozenset((int(s), int(t)) for s, t in links))

    def to_dense(self, dtype=np.float32) -> np.ndarray:
        """T x S target: a linked cell holds 1/(links of its target word); unlinked rows are 0."""
        dense = np.zeros((self.T, self.S), dtype=dtype)
        per_row = defaultdict(int)
        for _, t in self.links:
            per_row[t] += 1
        for s, t in self.links:
            dense[t, s] = 1.0 / per_row[t]
        return dense

    def aligned_rows(self) -> np.ndarray:
        rows = np.zeros(self.T, dtype=bool)
        for _, t in self.links:
            rows[t] = True
        return rows

    def to_ccs(self) -> SparseCCS:
        return SparseCCS.from_dense(self.to_dense())

    @classmethod
    def from_ccs(cls, ccs: SparseCCS) -> "AlignmentMatrix":
        T, S = ccs.shape
        cols = np.repeat(np.arange(S), np.diff(ccs.col_ptr))
        return cls.from_links(zip(cols.tolist(), ccs.row_idx.tolist()), S, T)

    @classmethod
    def from_dense(cls, dense) -> "AlignmentMatrix":
        dense = np.asarray(dense)
        t_idx, s_idx = np.nonzero(dense)
        return cls.from_links(zip(s_idx.tolist(), t_idx.tolist()), dense.shape[1], dense.shape[0])

    def to_pharaoh(self) -> str:
        return " ".join(f"{s}-{t}" for s, t in sorted(self.links))

    @classmethod
    def from_pharaoh(cls, line: str, S: int, T: int, lineno: int = 1) -> "AlignmentMatrix":
        links = []
        for item in line.split():
            try:
                s_str, t_str = item.split("-")
                s, t = int(s_str), int(t_str)
            except ValueError:
                raise PharaohParseError(f"line {lineno}: malformed link {item!r}") from None
            if not (0 <= s < S and 0 <= t < T):
                raise PharaohParseError(f"line {lineno}: link {item} out of range (S={S}, T={T})")
            links.append((s, t))
        return cls.from_links(links, S, T)


def viterbi_align(src, tgt, table: TranslationTable,
                  diagonal_strength: float = DEFAULT_DIAGONAL_STRENGTH) -> AlignmentMatrix:
    """Link every target word to argmax_s t(tgt|src_s) * prior(s, t); ties go to smaller s.

    A target word unknown to the table is linked by the prior alone.
    """
    S, T = len(src), len(tgt)
    prior = diagonal_prior(S, T, diagonal_strength)
    links = []
    for t, f in enumerate(tgt):
        lex = np.array([table(e, f) for e in src])
        score = prior[t] * lex if lex.any() else prior[t]
        links.append((int(np.argmax(score)), t))
    return AlignmentMatrix.from_links(links, S, T)


def align_corpus(corpus, iterations: int = 5,
                 diagonal_strength: float = DEFAULT_DIAGONAL_STRENGTH) -> list[AlignmentMatrix | None]:
    corpus = [(list(s), list(t)) for s, t in corpus]
    table = ibm1_train(corpus, iterations, diagonal_strength)
    return [viterbi_align(s, t, table, diagonal_strength) if s and t else None for s, t in corpus]


def write_pharaoh(path, alignments) -> None:
    lines = ["" if a is None else a.to_pharaoh() for a in alignments]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_pharaoh(path, lengths) -> list[AlignmentMatrix]:
    """Read one alignment per line; ``lengths`` gives (S, T) for each line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) != len(lengths):
        raise PharaohParseError(f"{len(lines)} alignment lines for {len(lengths)} sentence pairs")
    return [AlignmentMatrix.from_pharaoh(line, S, T, i + 1)
            for i, (line, (S, T)) in enumerate(zip(lines, lengths))]
