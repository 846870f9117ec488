"""Attention LSTM encoder-decoder.

Encoder: word embedding concatenated with normalised feature vectors, then a
stack of (optionally bidirectional) LSTM layers.  Bidirectional outputs are
summed so every layer has width ``rnn_size``.

Decoder step: the LSTM stack reads ``[embedding | target features | input
feed]``; attention scores are ``h_t . (h_s W_a)`` (bilinear "general" score),
masked source positions get probability exactly 0, the context vector and
``h_t`` go through ``tanh(W_c [c; h_t])`` to give the attentional state which
feeds the generator and becomes the next input feed.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Graph, Tensor
from .vocab import (BOS, CONTROL_TOKENS, EOS, PAD, POLITENESS_MODES, FeatureSpec, Vocab,
                    control_token, feature_vector)

__all__ = ["ModelConfig", "NmtModel", "DecoderState", "EncoderOutput", "GeneratorOutput",
           "prepend_control_token", "load_external_embeddings", "embed_with_features",
           "PAPER_RANGES"]

# meta-parameter ranges of the production systems; toy models sit below them
PAPER_RANGES = {"num_layers": (2, 4), "rnn_size": (300, 1000), "embed_size": (400, 1000)}


@dataclass
class ModelConfig:
    num_layers: int = 2
    rnn_size: int = 64
    embed_size: int = 64
    bidirectional: bool = True
    dropout: float = 0.3
    src_vocab_size: int = 0
    tgt_vocab_size: int = 0
    src_features: tuple[int, ...] = ()
    tgt_features: tuple[int, ...] = ()
    max_source_len: int = 250
    init_scale: float = 0.1

    def __post_init__(self):
        self.src_features = tuple(self.src_features)
        self.tgt_features = tuple(self.tgt_features)
        if self.num_layers < 1 or self.rnn_size < 1 or self.embed_size < 1:
            raise ValueError("layers and sizes must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def encoder_input_size(self) -> int:
        return self.embed_size + sum(self.src_features)

    @property
    def decoder_input_size(self) -> int:
        return self.embed_size + sum(self.tgt_features) + self.rnn_size

    def outside_paper_ranges(self) -> list[str]:
        return [k for k, (lo, hi) in PAPER_RANGES.items() if not lo <= getattr(self, k) <= hi]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class EncoderOutput:
    states: Tensor          # [B, S, H]
    keys: Tensor            # states @ W_a, [B, S, H]
    mask: np.ndarray        # [B, S] bool, True on real tokens
    final: list             # per layer (h, c), each [B, H]

    def select(self, rows) -> "EncoderOutput":
        rows = np.asarray(rows)
        return EncoderOutput(T.constant(self.states.data[rows], self.states.data.dtype),
                             T.constant(self.keys.data[rows], self.keys.data.dtype),
                             self.mask[rows],
                             [(T.constant(h.data[rows], h.data.dtype),
                               T.constant(c.data[rows], c.data.dtype)) for h, c in self.final])


@dataclass
class DecoderState:
    layers: list            # per layer (h, c)
    input_feed: Tensor      # previous attentional state
    feats: list = field(default_factory=list)   # previous target-feature ids, one [N] array each
    step: int = 0

    def select(self, rows) -> "DecoderState":
        rows = np.asarray(rows)
        pick = lambda t: T.constant(t.data[rows], t.data.dtype)
        return DecoderState([(pick(h), pick(c)) for h, c in self.layers], pick(self.input_feed),
                            [f[rows] for f in self.feats], self.step)


@dataclass
class GeneratorOutput:
    probs: np.ndarray               # [N, V]
    feature_probs: list             # one [N, n_f] per target feature
    attention: np.ndarray           # [N, S]


def embed_with_features(table: Tensor, ids, feature_values, feature_sizes) -> Tensor:
    """Concatenate word embeddings with one normalised vector per feature."""
    parts = [T.gather_rows(table, ids)]
    dtype = table.data.dtype
    for n_f, values in zip(feature_sizes, feature_values):
        parts.append(T.constant(feature_vector(n_f, values, dtype.type), dtype))
    return parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)


class NmtModel:
    def __init__(self, config: ModelConfig, src_vocab: Vocab, tgt_vocab: Vocab,
                 src_feature_specs=(), tgt_feature_specs=(), seed: int = 0, dtype=None):
        config.src_vocab_size = len(src_vocab)
        config.tgt_vocab_size = len(tgt_vocab)
        config.src_features = tuple(f.n for f in src_feature_specs)
        config.tgt_features = tuple(f.n for f in tgt_feature_specs)
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.src_feature_specs = tuple(src_feature_specs)
        self.tgt_feature_specs = tuple(tgt_feature_specs)
        self.seed = seed
        self.graph = Graph(seed=seed, dtype=dtype)
        self.frozen_rows: dict[str, np.ndarray] = {}
        self.masks: dict[str, np.ndarray] = {}
        self.sparse: dict = {}
        self.training = False
        self._build()

    # -- parameters ---------------------------------------------------------

    def _build(self):
        c, g, s = self.config, self.graph, self.config.init_scale
        H, E = c.rnn_size, c.embed_size
        g.param("src_emb", (c.src_vocab_size, E), scale=s)
        g.param("tgt_emb", (c.tgt_vocab_size, E), scale=s)
        dirs = ("fwd", "bwd") if c.bidirectional else ("fwd",)
        for layer in range(c.num_layers):
            n_in = c.encoder_input_size if layer == 0 else H
            for d in dirs:
                g.param(f"enc.{layer}.{d}.Wx", (n_in, 4 * H), scale=s)
                g.param(f"enc.{layer}.{d}.Wh", (H, 4 * H), scale=s)
                g.param(f"enc.{layer}.{d}.b", (4 * H,), scale=s)
        for layer in range(c.num_layers):
            n_in = c.decoder_input_size if layer == 0 else H
            g.param(f"dec.{layer}.Wx", (n_in, 4 * H), scale=s)
            g.param(f"dec.{layer}.Wh", (H, 4 * H), scale=s)
            g.param(f"dec.{layer}.b", (4 * H,), scale=s)
        g.param("attn.Wa", (H, H), scale=s)
        g.param("attn.Wc", (2 * H, H), scale=s)
        g.param("gen.W", (H, c.tgt_vocab_size), scale=s)
        g.param("gen.b", (c.tgt_vocab_size,), scale=s)
        for k, n_f in enumerate(c.tgt_features):
            g.param(f"feat.{k}.W", (H, n_f), scale=s)
            g.param(f"feat.{k}.b", (n_f,), scale=s)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.graph.params

    def p(self, name: str) -> Tensor:
        return self.graph.params[name]

    def train_mode(self, on: bool = True):
        self.training = on
        return self

    def _linear(self, x: Tensor, name: str) -> Tensor:
        sp = self.sparse.get(name)
        if sp is not None:
            from .compression import ccs_matvec
            flat = x.data.reshape(-1, x.shape[-1])
            out = ccs_matvec(sp, flat.T).T.astype(x.data.dtype)
            return T.constant(out.reshape(x.shape[:-1] + (out.shape[-1],)), x.data.dtype)
        return T.matmul(x, self.p(name))

    def _dropout(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.config.dropout, self.graph.rng, self.training)

    # -- encoder --------------------------------------------------------------

    def encode(self, src_ids, src_feats=(), lengths=None) -> EncoderOutput:
        """``src_ids`` is [B, S] (right padded); ``lengths`` defaults to full rows."""
        c = self.config
        src_ids = np.asarray(src_ids, dtype=np.int64)
        if src_ids.ndim == 1:
            src_ids = src_ids[None]
            src_feats = [np.asarray(f)[None] for f in src_feats]
        B, S = src_ids.shape
        if S == 0:
            raise ValueError("empty source sequence")
        if S > c.max_source_len:
            raise ValueError(f"source length {S} exceeds max_source_len={c.max_source_len}")
        lengths = np.full(B, S) if lengths is None else np.asarray(lengths)
        mask = np.arange(S)[None, :] < lengths[:, None]
        padded = not mask.all()
        x = embed_with_features(self.p("src_emb"), src_ids, src_feats, c.src_features)
        dtype = x.data.dtype
        H = c.rnn_size
        final = []
        for layer in range(c.num_layers):
            if layer > 0:
                x = self._dropout(x)
            outs = []
            finals = []
            for d in (("fwd", "bwd") if c.bidirectional else ("fwd",)):
                pre = f"enc.{layer}.{d}"
                xproj = T.add(self._linear(x, pre + ".Wx"), self.p(pre + ".b"))
                h = T.constant(np.zeros((B, H), dtype), dtype)
                cell = h
                steps = range(S) if d == "fwd" else range(S - 1, -1, -1)
                hs = [None] * S
                for s in steps:
                    gates = T.add(xproj[:, s], self._linear(h, pre + ".Wh"))
                    h_new, c_new = T.lstm_cell(gates, cell)
                    if padded and not mask[:, s].all():
                        keep = mask[:, s:s + 1]
                        h_new = T.masked_update(h_new, h, keep)
                        c_new = T.masked_update(c_new, cell, keep)
                    h, cell = h_new, c_new
                    hs[s] = h
                outs.append(T.stack(hs, axis=1))
                finals.append((h, cell))
            if len(outs) == 2:
                x = T.add(outs[0], outs[1])
                final.append((T.add(finals[0][0], finals[1][0]), T.add(finals[0][1], finals[1][1])))
            else:
                x = outs[0]
                final.append(finals[0])
        keys = self._linear(x, "attn.Wa")
        return EncoderOutput(x, keys, mask, final)

    # -- decoder --------------------------------------------------------------

    def initial_state(self, enc: EncoderOutput) -> DecoderState:
        B = enc.mask.shape[0]
        dtype = enc.states.data.dtype
        feed = T.constant(np.zeros((B, self.config.rnn_size), dtype), dtype)
        feats = [np.full(B, spec.index(spec.default), dtype=np.int64) for spec in self.tgt_feature_specs]
        return DecoderState(list(enc.final), feed, feats, 0)

    def decode_step(self, state: DecoderState, prev_ids, enc: EncoderOutput):
        """One decoder step.  Returns ``(new_state, attentional_state, attention)``;
        :meth:`generate` turns the attentional state into distributions."""
        c = self.config
        x = embed_with_features(self.p("tgt_emb"), np.asarray(prev_ids, dtype=np.int64),
                                state.feats, c.tgt_features)
        x = T.concat([x, state.input_feed], axis=-1)
        layers = []
        for layer, (h, cell) in enumerate(state.layers):
            if layer > 0:
                x = self._dropout(x)
            pre = f"dec.{layer}"
            gates = T.add(T.add(self._linear(x, pre + ".Wx"), self._linear(h, pre + ".Wh")),
                          self.p(pre + ".b"))
            h, cell = T.lstm_cell(gates, cell)
            layers.append((h, cell))
            x = h
        N, H = x.shape
        S = enc.mask.shape[1]
        scores = T.reshape(T.matmul(enc.keys, T.reshape(x, (N, H, 1))), (N, S))
        alpha = T.softmax(scores, mask=enc.mask)
        ctx = T.reshape(T.matmul(T.reshape(alpha, (N, 1, S)), enc.states), (N, H))
        attn_h = T.tanh(self._linear(T.concat([ctx, x], axis=-1), "attn.Wc"))
        return DecoderState(layers, attn_h, state.feats, state.step + 1), attn_h, alpha

    def logits(self, attn_h: Tensor) -> Tensor:
        return T.add(self._linear(self._dropout(attn_h), "gen.W"), self.p("gen.b"))

    def feature_logits(self, attn_h: Tensor) -> list[Tensor]:
        return [T.add(self._linear(attn_h, f"feat.{k}.W"), self.p(f"feat.{k}.b"))
                for k in range(len(self.config.tgt_features))]

    def generate(self, attn_h: Tensor, alpha: Tensor) -> GeneratorOutput:
        probs = T.softmax(self.logits(attn_h)).data
        feats = [T.softmax(z).data for z in self.feature_logits(attn_h)]
        return GeneratorOutput(probs, feats, alpha.data)

    def step(self, state: DecoderState, prev_ids, enc: EncoderOutput):
        """Inference step: returns ``(new_state, GeneratorOutput)`` with the
        argmax target features fed forward."""
        new, attn_h, alpha = self.decode_step(state, prev_ids, enc)
        out = self.generate(attn_h, alpha)
        new.feats = [fp.argmax(axis=-1) for fp in out.feature_probs]
        return new, out

    # -- convenience ----------------------------------------------------------

    def encode_tokens(self, tokens, feats=()):
        ids = np.array([self.src_vocab.encode(tokens)])
        fids = [np.array([[spec.index(v) for v in vals]]) for spec, vals in zip(self.src_feature_specs, feats)]
        return self.encode(ids, fids)

    def predict_target_features(self, attn_states: list[np.ndarray]) -> list[list[int]]:
        """Feature labels for the words of a decoded sequence.

        ``attn_states`` holds the attentional state of every step including the
        final ``</s>`` step; the prediction made at step ``t + 1`` labels word ``t``.
        """
        if len(attn_states) < 1:
            raise ValueError("need at least one decoder step")
        with T.no_grad():
            stacked = T.constant(np.stack(attn_states), attn_states[0].dtype)
            dists = [T.softmax(z).data for z in self.feature_logits(stacked)]
        return [list(d[1:].argmax(axis=-1)) for d in dists]

    def clone(self) -> "NmtModel":
        other = NmtModel.__new__(NmtModel)
        other.__dict__.update(self.__dict__)
        other.config = ModelConfig.from_dict(self.config.to_dict())
        other.graph = Graph(dtype=self.graph.dtype)
        other.graph.rng.state = self.graph.rng.state
        for name, p in self.graph.params.items():
            other.graph.params[name] = Tensor(p.data.copy(), name=name, requires_grad=True)
        other.frozen_rows = {k: v.copy() for k, v in self.frozen_rows.items()}
        other.masks = {k: v.copy() for k, v in self.masks.items()}
        other.sparse = {}
        return other


def prepend_control_token(tokens, mode: str | None, modes=POLITENESS_MODES) -> list[str]:
    """Prefix the register token; ``neutral`` (or ``None``) leaves the sentence unchanged."""
    if mode is None or mode == "neutral":
        return list(tokens)
    if mode not in modes:
        raise ValueError(f"unknown politeness mode {mode!r}; expected one of {modes}")
    return [control_token(mode)] + list(tokens)


def is_control_token(token: str) -> bool:
    return token in CONTROL_TOKENS


def load_external_embeddings(model: NmtModel, path, side: str = "src", freeze: bool = True) -> int:
    """Overwrite embedding rows from a ``word v1 ... vd`` text file.

    Returns the number of rows loaded.  With ``freeze`` those rows get zero
    gradient during training.
    """
    name = f"{side}_emb"
    vocab = model.src_vocab if side == "src" else model.tgt_vocab
    table = model.p(name)
    dim = table.shape[1]
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ValueError(f"{path}:{lineno}: embedding dim {len(values)} != {dim}")
            if word in vocab:
                i = vocab.index[word]
                table.data[i] = np.array(values, dtype=np.float64).astype(table.data.dtype)
                rows.append(i)
    if freeze and rows:
        prev = model.frozen_rows.get(name, np.zeros(0, dtype=np.int64))
        model.frozen_rows[name] = np.union1d(prev, rows).astype(np.int64)
    if not rows:
        warnings.warn(f"{path}: no vocabulary word found")
    return len(rows)
