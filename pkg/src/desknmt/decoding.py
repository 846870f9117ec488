"""Beam search, batched translation, ensembles, unknown-word replacement and
shallow fusion with a stupid-backoff n-gram language model."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .model import NmtModel, is_control_token
from .placeholders import PLACEHOLDER_TOKENS
from .vocab import BOS, EOS, PAD, UNK

__all__ = [
    "Hypothesis", "TranslationResult", "EnsembleSet", "NGramLM", "PlaceholderConstraint",
    "beam_search", "batch_translate", "ensemble_step", "average_probs", "replace_unknown",
    "lm_train", "lm_score", "fusion_rescore", "Candidate", "read_dictionary",
    "format_nbest", "greedy_decode",
]


@dataclass
class Hypothesis:
    ids: tuple = ()
    score: float = 0.0
    attention: list = field(default_factory=list)      # one alpha vector per emitted token
    feature_steps: list = field(default_factory=list)  # argmax feature ids predicted at each step
    surfaces: dict = field(default_factory=dict)       # position -> word for injected OOV words
    finished: bool = False
    forced: bool = False
    words: list = field(default_factory=list)

    def extend(self, token: int, step_score: float, alpha, feats, surface=None) -> "Hypothesis":
        surfaces = self.surfaces
        if surface is not None:
            surfaces = dict(surfaces)
            surfaces[len(self.ids)] = surface
        return Hypothesis(self.ids + (token,), self.score + step_score, self.attention + [alpha],
                          self.feature_steps + [feats], surfaces, token == EOS)

    def output_ids(self) -> tuple:
        return self.ids[:-1] if self.ids and self.ids[-1] == EOS else self.ids

    def word_features(self) -> list[list[int]]:
        """Per target feature, the label of each output word (read one step later)."""
        n = len(self.output_ids())
        if not self.feature_steps or not self.feature_steps[0]:
            return []
        k = len(self.feature_steps[0])
        steps = self.feature_steps
        return [[int(steps[t + 1][j]) if t + 1 < len(steps) else int(steps[t][j]) for t in range(n)]
                for j in range(k)]


@dataclass
class TranslationResult:
    best: Hypothesis
    nbest: list
    source: list


# ---------------------------------------------------------------------------
# ensembles


class EnsembleSet:
    def __init__(self, models):
        models = list(models)
        if not models:
            raise ValueError("an ensemble needs at least one model")
        first = models[0]
        for m in models[1:]:
            if m.tgt_vocab != first.tgt_vocab:
                raise ValueError("ensemble members must share the target vocabulary")
            if m.src_vocab != first.src_vocab:
                raise ValueError("ensemble members must share the source vocabulary")
        self.models = models

    def __len__(self):
        return len(self.models)

    def __iter__(self):
        return iter(self.models)


def average_probs(dists) -> np.ndarray:
    """Arithmetic mean in load order, accumulated in extended precision."""
    dists = list(dists)
    acc = np.zeros(dists[0].shape, dtype=np.longdouble)
    for p in dists:
        acc += p
    return (acc / len(dists)).astype(dists[0].dtype)


def ensemble_step(models, states, prev_ids, encs):
    """Advance every member one step; returns ``(new_states, mean_probs, outputs)``."""
    new_states, outs = [], []
    for model, state, enc in zip(models, states, encs):
        s, out = model.step(state, prev_ids, enc)
        new_states.append(s)
        outs.append(out)
    return new_states, average_probs(o.probs for o in outs), outs


# ---------------------------------------------------------------------------
# n-gram LM


class NGramLM:
    """Count-based LM scored with stupid backoff (``alpha = 0.4``)."""

    def __init__(self, order: int, alpha: float = 0.4, eos: bool = False):
        if not 1 <= order <= 5:
            raise ValueError("order must be in [1, 5]")
        self.order = order
        self.alpha = alpha
        self.eos = eos
        self.ngrams: list[Counter] = [Counter() for _ in range(order)]   # index n-1
        self.contexts: list[Counter] = [Counter() for _ in range(order)]
        self.total = 0
        self.vocab: set[str] = set()

    def add_sentence(self, tokens):
        toks = list(tokens) + (["</s>"] if self.eos else [])
        padded = ["<s>"] * (self.order - 1) + toks
        self.vocab.update(toks)
        self.total += len(toks)
        start = self.order - 1
        for i in range(start, len(padded)):
            for n in range(1, self.order + 1):
                ctx = tuple(padded[i - n + 1:i])
                if n > 1 and (i - n + 1) < 0:
                    continue
                self.ngrams[n - 1][ctx + (padded[i],)] += 1
                self.contexts[n - 1][ctx] += 1

    def prob(self, context, token) -> float:
        ctx = tuple((["<s>"] * (self.order - 1) + list(context))[-(self.order - 1):]) if self.order > 1 else ()
        factor = 1.0
        for n in range(len(ctx) + 1, 0, -1):
            sub = ctx[len(ctx) - (n - 1):] if n > 1 else ()
            count = self.ngrams[n - 1].get(sub + (token,), 0)
            if count:
                return factor * count / self.contexts[n - 1][sub]
            factor *= self.alpha
        # unseen word: one pseudo-count over an open vocabulary, so it always
        # ranks below every seen unigram
        return factor / self.alpha / (self.total + len(self.vocab) + 1)

    def score(self, context, token) -> float:
        return math.log(self.prob(context, token))

    def save(self, path):
        lines = [f"#ngram-v1 order={self.order} alpha={self.alpha} eos={int(self.eos)} total={self.total}"]
        for n in range(self.order):
            for gram, c in sorted(self.ngrams[n].items()):
                lines.append(f"{c}\t{' '.join(gram)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NGramLM":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        head = dict(kv.split("=") for kv in lines[0].split()[1:])
        lm = cls(int(head["order"]), float(head["alpha"]), bool(int(head["eos"])))
        lm.total = int(head["total"])
        for line in lines[1:]:
            c, gram = line.split("\t")
            gram = tuple(gram.split(" "))
            lm.ngrams[len(gram) - 1][gram] += int(c)
            lm.contexts[len(gram) - 1][gram[:-1]] += int(c)
            if len(gram) == 1:
                lm.vocab.add(gram[0])
        return lm


def lm_train(corpus, order: int, eos: bool = False) -> NGramLM:
    lm = NGramLM(order, eos=eos)
    for sent in corpus:
        lm.add_sentence(sent)
    return lm


def lm_score(lm: NGramLM, context, token) -> float:
    return lm.score(context, token)


@dataclass
class Candidate:
    token: int
    word: str
    nmt_logprob: float | None    # None for dictionary words outside the NMT vocabulary
    parent: int = 0
    fused: float = 0.0


def fusion_rescore(candidates, lm: NGramLM, beta: float, context=()) -> list[Candidate]:
    """Score ``log p_LM(x) + beta * log p_NMT(x)`` and sort best first.

    Candidates without an NMT score are ranked by the LM term alone.
    Ties go to the smaller token id.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    out = []
    for c in candidates:
        lm_term = 0.0 if (c.token == EOS and not lm.eos) else lm.score(context, c.word)
        nmt_term = 0.0 if c.nmt_logprob is None else beta * c.nmt_logprob
        out.append(Candidate(c.token, c.word, c.nmt_logprob, c.parent, lm_term + nmt_term))
    return sorted(out, key=lambda c: (-c.fused, c.token, c.word))


def read_dictionary(path) -> dict[str, list[str]]:
    table: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            src, tgt = line.split("\t")
            table.setdefault(src, []).append(tgt)
    return table


# ---------------------------------------------------------------------------
# constraints and unknown replacement


class PlaceholderConstraint:
    """Forbid placeholder tokens beyond their count in the source."""

    def __init__(self, tgt_vocab):
        self.ids = {tok: tgt_vocab.index[tok] for tok in PLACEHOLDER_TOKENS if tok in tgt_vocab}

    def budget(self, source_tokens) -> dict[int, int]:
        counts = Counter(t for t in source_tokens if t in self.ids)
        return {tid: counts.get(tok, 0) for tok, tid in self.ids.items()}

    def blocked(self, budget: dict[int, int], emitted) -> list[int]:
        used = Counter(emitted)
        return [tid for tid, n in budget.items() if used.get(tid, 0) >= n]


def _copy_source(alpha, source_tokens, exclude) -> int:
    a = np.asarray(alpha, dtype=np.float64)[:len(source_tokens)].copy()
    for i, tok in enumerate(source_tokens):
        if exclude(tok):
            a[i] = -1
    return int(np.argmax(a))


def replace_unknown(hypothesis: Hypothesis, source_tokens, dictionary=None, unk: str = "<unk>",
                    exclude=is_control_token) -> list[str]:
    """Replace each ``<unk>`` by the dictionary entry of the most attended source
    word, or by that word itself.  Control/separator tokens are never copied."""
    dictionary = dictionary or {}
    words = list(hypothesis.words)
    for t, w in enumerate(words):
        if w != unk:
            continue
        s = _copy_source(hypothesis.attention[t], source_tokens, exclude)
        src_word = source_tokens[s]
        entry = dictionary.get(src_word)
        words[t] = (entry[0] if isinstance(entry, list) else entry) if entry else src_word
    return words


# ---------------------------------------------------------------------------
# search


def _as_models(model):
    if isinstance(model, EnsembleSet):
        return model.models
    if isinstance(model, (list, tuple)):
        return EnsembleSet(model).models
    return [model]


def _encode_batch(model: NmtModel, sources, src_feats):
    B = len(sources)
    S = max(len(s) for s in sources)
    ids = np.zeros((B, S), dtype=np.int64)
    feats = [np.zeros((B, S), dtype=np.int64) for _ in model.src_feature_specs]
    for b, src in enumerate(sources):
        ids[b, :len(src)] = model.src_vocab.encode(src)
        for k, spec in enumerate(model.src_feature_specs):
            feats[k][b, :len(src)] = [spec.index(v) for v in src_feats[b][k]]
    lengths = np.array([len(s) for s in sources])
    return model.encode(ids, feats, lengths)


def _search(models, sources, src_feats, beam_size, max_len, n_best, constraint, lm, beta,
            dictionary):
    B = len(sources)
    encs = [_encode_batch(m, sources, src_feats) for m in models]
    states = [m.initial_state(e) for m, e in zip(models, encs)]
    vocab = models[0].tgt_vocab
    V = len(vocab)
    lengths = [len(s) for s in sources]
    budgets = [constraint.budget(src) for src in sources] if constraint else None
    active = [[Hypothesis()] for _ in range(B)]
    finished = [[] for _ in range(B)]
    done = [False] * B
    row_sent = np.arange(B)
    for step in range(max_len):
        rows = [(b, h) for b in range(B) if not done[b] for h in active[b]]
        if not rows:
            break
        prev = np.array([h.ids[-1] if h.ids else BOS for _, h in rows], dtype=np.int64)
        sel = [e.select(row_sent) if len(row_sent) != B or not np.array_equal(row_sent, np.arange(B))
               else e for e in encs]
        states, probs, outs = ensemble_step(models, states, prev, sel)
        with np.errstate(divide="ignore"):
            logp = np.log(probs.astype(np.float64))
        logp[:, PAD] = -np.inf
        logp[:, BOS] = -np.inf
        attn = outs[0].attention
        if outs[0].feature_probs:
            feats = np.stack([fp.argmax(axis=-1) for fp in outs[0].feature_probs], axis=1).tolist()
        else:
            feats = [[]] * len(rows)
        if budgets is not None:
            for r, (b, h) in enumerate(rows):
                blocked = constraint.blocked(budgets[b], h.ids)
                if blocked:
                    logp[r, blocked] = -np.inf
        live = [b for b in range(B) if not done[b]]
        plain = _plain_topk([active[b] for b in live], logp, beam_size) if lm is None else None
        parents = []
        new_active = [[] for _ in range(B)]
        r0 = 0
        for j, b in enumerate(live):
            hyps = active[b]
            n = len(hyps)
            if plain is not None:
                cands = [(r0 + p, t, sc, None) for p, t, sc in plain[j]]
            else:
                cands = _expand(hyps, logp[r0:r0 + n], beam_size, lm, beta, dictionary, vocab, sources[b],
                                attn[r0:r0 + n], r0)
            for parent_row, tok, step_score, surface in cands:
                h = hyps[parent_row - r0]
                alpha = attn[parent_row, :lengths[b]].copy()
                child = h.extend(tok, step_score, alpha, feats[parent_row], surface)
                if child.finished:
                    finished[b].append(child)
                else:
                    new_active[b].append(child)
                    parents.append(parent_row)
            r0 += n
            best_active = max((h.score for h in new_active[b]), default=-np.inf)
            fin = sorted(h.score for h in finished[b])[::-1]
            if not new_active[b] or (len(fin) >= n_best and fin[n_best - 1] >= best_active):
                done[b] = True
                parents = parents[:len(parents) - len(new_active[b])]
                new_active[b] = []
        active = new_active
        parents = np.array(parents, dtype=np.int64)
        states = [s.select(parents) for s in states]
        row_sent = np.array([b for b in range(B) for _ in active[b]], dtype=np.int64)
        if not len(row_sent):
            break
    results = []
    for b in range(B):
        pool = list(finished[b])
        for h in active[b]:
            h.forced = True
            pool.append(h)
        pool.sort(key=lambda h: (-h.score, h.ids))
        nb = pool[:n_best]
        for h in nb:
            h.words = [h.surfaces.get(i, vocab.tokens[t]) for i, t in enumerate(h.output_ids())]
        results.append(TranslationResult(nb[0] if nb else Hypothesis(forced=True), nb, list(sources[b])))
    return results


def _plain_topk(groups, logp, K):
    """Top-K expansions for every sentence at once, without an LM.

    ``groups`` holds each live sentence's hypotheses in row order.  Returns,
    per sentence, ``(parent, token, step_score)`` best first with ties going
    to the smaller token id, then the earlier parent.
    """
    counts = np.array([len(g) for g in groups])
    n_max, V = int(counts.max()), logp.shape[1]
    slot = np.repeat(np.arange(len(groups)), counts)
    pos = np.arange(len(slot)) - np.repeat(np.cumsum(counts) - counts, counts)
    hyp_scores = np.array([h.score for g in groups for h in g])
    total = np.full((len(groups), n_max, V), -np.inf)
    total[slot, pos] = hyp_scores[:, None] + logp
    flat = total.reshape(len(groups), -1)
    cells = np.arange(n_max * V)
    toks, pars = np.broadcast_to(cells % V, flat.shape), np.broadcast_to(cells // V, flat.shape)
    order = np.lexsort((pars, toks, -flat), axis=-1)[:, :K]
    best = np.take_along_axis(flat, order, axis=-1)
    out = []
    for j, offset in enumerate(np.cumsum(counts) - counts):
        keep = order[j][np.isfinite(best[j])]
        p, t = keep // V, keep % V
        out.append(list(zip(p.tolist(), t.tolist(), logp[offset + p, t].tolist())))
    return out


def _expand(hyps, logp, K, lm, beta, dictionary, vocab, source, attn, r0):
    """Top-K fused expansions of one sentence's hypotheses.

    Returns ``(parent_row, token, step_score, surface)`` tuples best first;
    ties go to the smaller token id, then the earlier parent.
    """
    pool = []
    for i, h in enumerate(hyps):
        row = logp[i]
        finite = np.flatnonzero(np.isfinite(row))
        top = finite[np.lexsort((finite, -row[finite]))][:K]
        cands = [Candidate(int(t), vocab.tokens[t], float(row[t]), i) for t in top]
        if dictionary and len(top) and top[0] == UNK:
            s = _copy_source(attn[i], source, is_control_token)
            for word in dictionary.get(source[s], []):
                if word in vocab:
                    tid = vocab.index[word]
                    if np.isfinite(row[tid]) and tid not in top:
                        cands.append(Candidate(tid, word, float(row[tid]), i))
                else:
                    cands.append(Candidate(UNK, word, None, i))
        context = [h.surfaces.get(j, vocab.tokens[t]) for j, t in enumerate(h.ids)]
        for c in fusion_rescore(cands, lm, beta, context):
            pool.append((h.score + c.fused, c))
    pool.sort(key=lambda x: (-x[0], x[1].token, x[1].parent, x[1].word))
    out = []
    for _, c in pool[:K]:
        surface = c.word if (c.token == UNK and c.nmt_logprob is None) else None
        out.append((r0 + c.parent, c.token, c.fused, surface))
    return out


def beam_search(model, source, beam_size: int = 5, max_len: int = 50, n_best: int = 1,
                constraint=None, src_feats=None, lm=None, beta: float = 1.0,
                dictionary=None) -> TranslationResult:
    """Beam search on one tokenized sentence.

    Scores are summed token log probabilities (no length normalisation);
    ``</s>`` retires a hypothesis; hypotheses still open at ``max_len`` are
    force-finished and flagged.
    """
    if beam_size < 1:
        raise ValueError("beam size must be >= 1")
    models = _as_models(model)
    with T.no_grad():
        return _search(models, [list(source)], [src_feats or []], beam_size, max_len,
                       max(n_best, 1), constraint, lm, beta, dictionary)[0]


def greedy_decode(model, source, max_len: int = 50, **kw) -> TranslationResult:
    return beam_search(model, source, 1, max_len, **kw)


def batch_translate(model, sentences, beam_size: int = 5, batch_size: int = 16, max_len: int = 50,
                    n_best: int = 1, constraint=None, src_feats=None, lm=None, beta: float = 1.0,
                    dictionary=None) -> list[TranslationResult]:
    """Translate many sentences ``batch_size`` at a time.

    Sentences are sorted by length internally; results come back in input order
    and match sentence-by-sentence :func:`beam_search`.
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    models = _as_models(model)
    sentences = [list(s) for s in sentences]
    feats = src_feats or [[] for _ in sentences]
    order = sorted(range(len(sentences)), key=lambda i: len(sentences[i]))
    results: list = [None] * len(sentences)
    with T.no_grad():
        for k in range(0, len(order), batch_size):
            idx = order[k:k + batch_size]
            out = _search(models, [sentences[i] for i in idx], [feats[i] for i in idx], beam_size,
                          max_len, max(n_best, 1), constraint, lm, beta, dictionary)
            for i, r in zip(idx, out):
                results[i] = r
    return results


def format_nbest(index: int, hyps) -> list[str]:
    return [f"{index} ||| {' '.join(h.words)} ||| {h.score:.6f}" for h in hyps]
