"""Losses, the SGD training loop, adaptation and training-data builders."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .aligner import AlignmentMatrix
from .model import NmtModel
from .tensor import SplitMix64, Tensor
from .vocab import BOS, EOS, PAD, SEPARATOR

__all__ = [
    "Example", "Batch", "TrainConfig", "LossBreakdown", "EpochReport", "make_examples",
    "make_batch", "batches", "nll_loss", "guided_alignment_loss", "forward_losses",
    "train", "adapt", "perplexity", "distill_prepare", "build_multisource_pair",
    "sgd_step",
]


@dataclass
class Example:
    src: list[int]
    tgt: list[int]
    src_feats: list = field(default_factory=list)    # one id list per source feature
    tgt_feats: list = field(default_factory=list)    # one id list per target feature
    alignment: AlignmentMatrix | None = None


def make_examples(model: NmtModel, pairs, src_feats=None, tgt_feats=None, alignments=None):
    """Encode token pairs with the model vocabularies.

    ``src_feats``/``tgt_feats`` give, per pair, one value sequence per feature.
    Out-of-vocabulary words become ``<unk>``.
    """
    out = []
    for i, (src, tgt) in enumerate(pairs):
        sf = [[spec.index(v) for v in vals] for spec, vals in
              zip(model.src_feature_specs, src_feats[i])] if src_feats else []
        tf = [[spec.index(v) for v in vals] for spec, vals in
              zip(model.tgt_feature_specs, tgt_feats[i])] if tgt_feats else []
        out.append(Example(model.src_vocab.encode(src), model.tgt_vocab.encode(tgt), sf, tf,
                           alignments[i] if alignments else None))
    return out


@dataclass
class Batch:
    src: np.ndarray
    lengths: np.ndarray
    src_feats: list
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray
    feat_in: list
    feat_out: list
    align: np.ndarray | None
    align_rows: np.ndarray | None

    @property
    def n_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def make_batch(model: NmtModel, examples: list[Example]) -> Batch:
    """Pad a list of examples.

    Target steps are ``len(tgt) + 1``: every word plus ``</s>``.  Feature
    targets are shifted one step right, so the label of word ``t`` is
    produced at step ``t + 1`` and step 0 predicts the feature default.
    """
    B = len(examples)
    S = max(len(e.src) for e in examples)
    Tn = max(len(e.tgt) for e in examples) + 1
    src = np.full((B, S), PAD, dtype=np.int64)
    lengths = np.array([len(e.src) for e in examples])
    tgt_in = np.full((B, Tn), PAD, dtype=np.int64)
    tgt_out = np.full((B, Tn), PAD, dtype=np.int64)
    mask = np.zeros((B, Tn), dtype=bool)
    src_specs, tgt_specs = model.src_feature_specs, model.tgt_feature_specs
    src_feats = [np.zeros((B, S), dtype=np.int64) for _ in src_specs]
    feat_out = [np.full((B, Tn), spec.index(spec.default), dtype=np.int64) for spec in tgt_specs]
    have_align = any(e.alignment is not None for e in examples)
    align = np.zeros((B, Tn, S), dtype=model.graph.dtype) if have_align else None
    rows = np.zeros((B, Tn), dtype=bool) if have_align else None
    for b, e in enumerate(examples):
        n = len(e.tgt)
        src[b, :len(e.src)] = e.src
        tgt_in[b, :n + 1] = [BOS] + e.tgt
        tgt_out[b, :n + 1] = e.tgt + [EOS]
        mask[b, :n + 1] = True
        for k in range(len(src_specs)):
            src_feats[k][b, :len(e.src)] = e.src_feats[k]
        for k in range(len(tgt_specs)):
            if e.tgt_feats:
                feat_out[k][b, 1:n + 1] = e.tgt_feats[k]
        if e.alignment is not None:
            a = e.alignment
            if (a.T, a.S) != (n, len(e.src)):
                raise ValueError(f"alignment shape {(a.T, a.S)} does not match pair {(n, len(e.src))}")
            align[b, :n, :a.S] = a.to_dense(dtype=align.dtype)
            rows[b, :n] = a.aligned_rows()
    feat_in = []
    for spec, fo in zip(tgt_specs, feat_out):
        fi = np.full_like(fo, spec.index(spec.default))
        fi[:, 1:] = fo[:, :-1]
        feat_in.append(fi)
    return Batch(src, lengths, src_feats, tgt_in, tgt_out, mask, feat_in, feat_out, align, rows)


def batches(examples: list[Example], batch_size: int, rng: SplitMix64 | None = None):
    """Group by source length, cut into batches and shuffle batch order."""
    buckets: dict[int, list[int]] = {}
    for i, e in enumerate(examples):
        buckets.setdefault(len(e.src), []).append(i)
    groups = []
    for length in sorted(buckets):
        idx = buckets[length]
        if rng is not None:
            idx = [idx[j] for j in rng.permutation(len(idx))]
        groups.extend(idx[k:k + batch_size] for k in range(0, len(idx), batch_size))
    if rng is not None:
        groups = [groups[j] for j in rng.permutation(len(groups))]
    return [[examples[i] for i in g] for g in groups]


# ---------------------------------------------------------------------------
# losses


def nll_loss(logits: Tensor, reference_ids, padding_mask) -> Tensor:
    """Mean negative log-likelihood over non-padding target positions."""
    return T.cross_entropy(logits, reference_ids, weights=padding_mask)


def guided_alignment_loss(A, alpha: Tensor, rows=None) -> Tensor:
    """``(1/T) * sum_t sum_s (A_st - alpha_st)^2`` over aligned target rows.

    ``A`` and ``alpha`` are [T, S] or [B, T, S]; ``rows`` marks target rows that
    carry at least one link (default: rows of ``A`` with any nonzero).  Rows
    outside ``rows`` are left out of both the sum and the count.
    """
    A = np.asarray(A, dtype=alpha.data.dtype)
    if A.shape != alpha.shape:
        raise T.ShapeError(f"alignment {A.shape} vs attention {alpha.shape}")
    if rows is None:
        rows = A.sum(axis=-1) > 0
    rows = np.asarray(rows, dtype=alpha.data.dtype)
    n_rows = rows.sum()
    if n_rows == 0:
        return T.constant(0.0, alpha.data.dtype)
    diff = T.sub(alpha, A)
    sq = T.mul(T.mul(diff, diff), rows[..., None])
    return T.scale(T.tensor_sum(sq), 1.0 / n_rows)


def _feature_loss(probs: Tensor, targets: np.ndarray, n_f: int, mask: np.ndarray) -> Tensor:
    """Squared error between softmax output and one-hot targets, per valid step."""
    onehot = np.zeros(targets.shape + (n_f,), dtype=probs.data.dtype)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    diff = T.sub(probs, onehot)
    sq = T.mul(T.mul(diff, diff), mask[..., None].astype(probs.data.dtype))
    return T.scale(T.tensor_sum(sq), 1.0 / mask.sum())


@dataclass
class LossBreakdown:
    L_dec: float
    L_ga: float
    L_feat: float
    L_total: float
    n_tokens: int


def forward_losses(model: NmtModel, batch: Batch, w_ga: float = 0.0, feat_weight: float = 1.0):
    """Teacher-forced forward pass.  Returns ``(total_loss_tensor, LossBreakdown, attention)``.

    ``L_total = w_ga * L_ga + (1 - w_ga) * L_dec + feat_weight * L_feat``; the
    guided term is dropped when the batch has no alignments.
    """
    enc = model.encode(batch.src, batch.src_feats, batch.lengths)
    state = model.initial_state(enc)
    hs, alphas = [], []
    for t in range(batch.tgt_in.shape[1]):
        state.feats = [f[:, t] for f in batch.feat_in]
        state, attn_h, alpha = model.decode_step(state, batch.tgt_in[:, t], enc)
        hs.append(attn_h)
        alphas.append(alpha)
    H_all = T.stack(hs, axis=1)
    L_dec = nll_loss(model.logits(H_all), batch.tgt_out, batch.tgt_mask)
    total = L_dec
    L_ga_val = 0.0
    alpha_all = T.stack(alphas, axis=1)
    if batch.align is not None:
        if w_ga > 0:
            L_ga = guided_alignment_loss(batch.align, alpha_all, batch.align_rows)
            total = T.add(T.scale(L_ga, w_ga), T.scale(L_dec, 1.0 - w_ga))
            L_ga_val = float(L_ga.data)
        else:
            with T.no_grad():
                L_ga_val = float(guided_alignment_loss(
                    batch.align, T.constant(alpha_all.data, alpha_all.data.dtype), batch.align_rows).data)
    L_feat_val = 0.0
    if model.config.tgt_features:
        feat_terms = []
        for k, z in enumerate(model.feature_logits(H_all)):
            feat_terms.append(_feature_loss(T.softmax(z), batch.feat_out[k],
                                            model.config.tgt_features[k], batch.tgt_mask))
        L_feat = feat_terms[0]
        for term in feat_terms[1:]:
            L_feat = T.add(L_feat, term)
        L_feat_val = float(L_feat.data)
        if feat_weight > 0:
            total = T.add(total, T.scale(L_feat, feat_weight))
    breakdown = LossBreakdown(float(L_dec.data), L_ga_val, L_feat_val, float(total.data),
                              batch.n_tokens)
    return total, breakdown, alpha_all


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class TrainConfig:
    epochs: int = 13
    batch_size: int = 64
    learning_rate: float = 1.0
    decay: float = 0.7
    start_decay_epoch: int = 9
    dropout: float | None = None        # None keeps the model's rate
    max_len: int = 50
    seed: int = 0
    w_ga: float = 0.5
    w_ga_decay: float = 0.9
    guided_decay: bool = True
    feat_weight: float = 1.0
    max_grad_norm: float = 5.0

    def __post_init__(self):
        if not 0 <= self.w_ga <= 1:
            raise ValueError("w_ga must lie in [0, 1]")
        for name in ("decay", "w_ga_decay"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")


@dataclass
class EpochReport:
    epoch: int
    ppl: float
    L_dec: float
    L_ga: float
    L_feat: float
    lr: float
    w_ga: float
    seconds: float
    dev_ppl: float | None = None
    extra: dict = field(default_factory=dict)

    def log_line(self) -> str:
        return "\t".join([str(self.epoch), f"{self.ppl:.4f}", f"{self.L_dec:.6f}", f"{self.L_ga:.6f}",
                          f"{self.L_feat:.6f}", f"{self.lr:.6g}", f"{self.w_ga:.6g}",
                          f"{self.seconds:.3f}"])


def sgd_step(model: NmtModel, lr: float, max_grad_norm: float | None = 5.0) -> float:
    """Clip by global norm, zero frozen rows and pruned positions, update in place.

    Returns the pre-clipping gradient norm.
    """
    params = model.params
    for name, rows in model.frozen_rows.items():
        params[name].grad[rows] = 0
    for name, mask in model.masks.items():
        params[name].grad *= mask
    norm = T.parameters_norm(p.grad for p in params.values())
    factor = 1.0
    if max_grad_norm is not None and norm > max_grad_norm:
        factor = max_grad_norm / norm
    step = params[next(iter(params))].data.dtype.type(lr * factor)
    for p in params.values():
        p.data -= step * p.grad
    return norm


def train(model: NmtModel, examples: list[Example], config: TrainConfig, dev=None,
          log=None, callback=None) -> list[EpochReport]:
    """Plain SGD over length-bucketed batches.

    ``log`` receives one tab-separated line per epoch.  ``callback(report,
    model)`` runs after every epoch and may return True to stop early.
    """
    examples = [e for e in examples if len(e.src) <= config.max_len and len(e.tgt) <= config.max_len]
    if not examples:
        raise ValueError("empty training corpus")
    if config.dropout is not None:
        model.config.dropout = config.dropout
    rng = SplitMix64(config.seed)
    lr, w_ga = config.learning_rate, config.w_ga
    reports = []
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        model.train_mode(True)
        tot = {"dec": 0.0, "ga": 0.0, "feat": 0.0, "tok": 0, "sents": 0, "ga_sents": 0}
        for group in batches(examples, config.batch_size, rng):
            batch = make_batch(model, group)
            loss, br, _ = forward_losses(model, batch, w_ga, config.feat_weight)
            T.backward(model.graph, loss)
            sgd_step(model, lr, config.max_grad_norm)
            tot["dec"] += br.L_dec * br.n_tokens
            tot["tok"] += br.n_tokens
            tot["feat"] += br.L_feat * len(group)
            tot["sents"] += len(group)
            if batch.align is not None:
                tot["ga"] += br.L_ga * len(group)
                tot["ga_sents"] += len(group)
        model.train_mode(False)
        model.graph.zero_grad()
        L_dec = tot["dec"] / tot["tok"]
        report = EpochReport(
            epoch=epoch, ppl=math.exp(L_dec), L_dec=L_dec,
            L_ga=tot["ga"] / tot["ga_sents"] if tot["ga_sents"] else 0.0,
            L_feat=tot["feat"] / tot["sents"], lr=lr, w_ga=w_ga,
            seconds=time.perf_counter() - start)
        if dev:
            report.dev_ppl = perplexity(model, dev, config.batch_size)
        reports.append(report)
        if log is not None:
            log(report.log_line())
        if epoch >= config.start_decay_epoch:
            lr *= config.decay
        if config.guided_decay:
            w_ga *= config.w_ga_decay
        if callback is not None and callback(report, model):
            break
    return reports


def perplexity(model: NmtModel, examples: list[Example], batch_size: int = 64) -> float:
    """exp(mean NLL per target token), ``</s>`` included, padding excluded."""
    if not examples:
        raise ValueError("empty corpus")
    was = model.training
    model.train_mode(False)
    total = 0.0
    n = 0
    with T.no_grad():
        for group in batches(examples, batch_size):
            batch = make_batch(model, group)
            _, br, _ = forward_losses(model, batch, 0.0, 0.0)
            total += br.L_dec * br.n_tokens
            n += br.n_tokens
    model.train_mode(was)
    return math.exp(total / n)


def adapt(model: NmtModel, in_domain: list[Example], epochs: int, config: TrainConfig | None = None,
          dev_in=None, dev_generic=None, log=None):
    """Continue training on in-domain data with the model's own vocabulary.

    Optimiser state starts fresh.  Returns ``(model, report)`` with dev
    perplexities before and after.
    """
    report = {}
    if dev_in:
        report["in_domain_before"] = perplexity(model, dev_in)
    if dev_generic:
        report["generic_before"] = perplexity(model, dev_generic)
    if epochs > 0:
        cfg = TrainConfig(**{**(config.__dict__ if config else {}), "epochs": epochs})
        report["epochs"] = train(model, in_domain, cfg, log=log)
    if dev_in:
        report["in_domain_after"] = perplexity(model, dev_in)
    if dev_generic:
        report["generic_after"] = perplexity(model, dev_generic)
    return model, report


# ---------------------------------------------------------------------------
# data builders


def distill_prepare(teacher, sources, references, n_best: int, beam_size: int | None = None,
                    max_len: int = 50, batch_size: int = 32):
    """Sequence-level distillation data.

    Each source is decoded to an n-best list; the hypothesis with the best
    smoothed sentence BLEU against the reference is kept.
    """
    from .decoding import batch_translate
    from .evaluation import sentence_bleu

    if n_best < 1:
        raise ValueError("n_best must be >= 1")
    results = batch_translate(teacher, sources, beam_size=beam_size or n_best, batch_size=batch_size,
                              max_len=max_len, n_best=n_best)
    corpus = []
    for src, ref, res in zip(sources, references, results):
        hyps = [h.words for h in res.nbest]
        if not hyps:
            warnings.warn("empty n-best list; sentence skipped")
            continue
        if n_best == 1:
            corpus.append((list(src), hyps[0]))
            continue
        scores = [sentence_bleu(h, ref) for h in hyps]
        best = max(range(len(hyps)), key=lambda i: (scores[i], -i))
        corpus.append((list(src), hyps[best]))
    return corpus


def build_multisource_pair(source, mt_hypothesis, separator: str = SEPARATOR) -> list[str]:
    if not source or not mt_hypothesis:
        raise ValueError("source and hypothesis must both be non-empty")
    return list(source) + [separator] + list(mt_hypothesis)
