"""Small trained experiments for the recaser, register control and post-editing."""

import random

import numpy as np
import pytest

from desknmt import tensor as T
from desknmt import toy
from desknmt.decoding import batch_translate
from desknmt.model import ModelConfig, NmtModel, prepend_control_token
from desknmt.training import TrainConfig, build_multisource_pair, make_examples, train
from desknmt.vocab import BOS, CASE_FEATURE, CONTROL_TOKENS, SEPARATOR, Vocab

pytestmark = pytest.mark.slow


def small(src_vocab, tgt_vocab, tgt_specs=(), seed=0):
    cfg = ModelConfig(num_layers=1, rnn_size=32, embed_size=32, dropout=0.0, init_scale=0.3)
    return NmtModel(cfg, src_vocab, tgt_vocab, (), tgt_specs, seed=seed)


def fit(model, examples, epochs, dev=None, lr=1.0):
    return train(model, examples, TrainConfig(epochs=epochs, batch_size=16, learning_rate=lr,
                                              start_decay_epoch=100, w_ga=0.0), dev=dev)


class TestRecaser:
    def test_sentence_initial_hello_is_capitalized(self):
        rng = random.Random(0)
        words = toy.words(10) + ["hello"]
        sources, cases = [], []
        for _ in range(600):
            sent = [rng.choice(words) for _ in range(rng.randint(2, 6))]
            if rng.random() < 0.3:
                sent[0] = "hello"
            sources.append(sent)
            cases.append([["C"] + ["L"] * (len(sent) - 1)])
        vocab = Vocab.build(sources)
        model = small(vocab, vocab, (CASE_FEATURE,))
        fit(model, make_examples(model, [(s, s) for s in sources], tgt_feats=cases), 6)

        # teacher-force "hello" as the first word; the next step predicts its case
        source = ["hello", "w3", "w4"]
        enc = model.encode_tokens(source)
        with T.no_grad():
            state, _ = model.step(model.initial_state(enc), np.array([BOS]), enc)
            _, out = model.step(state, np.array([vocab.id("hello")]), enc)
        p_cap = float(out.feature_probs[0][0, CASE_FEATURE.index("C")])
        assert p_cap > 0.9


class TestPoliteness:
    def test_mode_accuracy(self):
        data = toy.politeness_corpus(800, 15, seed=1)
        dev = toy.politeness_corpus(200, 15, seed=2)
        pairs = [(prepend_control_token(s, mode), t) for s, t, mode in data]
        src_vocab = Vocab.build([s for s, _ in pairs], controls=CONTROL_TOKENS)
        tgt_vocab = Vocab.build([t for _, t in pairs])
        model = small(src_vocab, tgt_vocab, seed=1)
        fit(model, make_examples(model, pairs), 8)
        results = batch_translate(model, [prepend_control_token(s, mode) for s, _, mode in dev], 5, 32)
        hits = [bool(r.best.words) and r.best.words[-1] == toy.ENDINGS[mode]
                for r, (_, _, mode) in zip(results, dev)]
        assert np.mean(hits) >= 0.68

    def test_control_token_never_emitted(self):
        data = toy.politeness_corpus(50, 6, seed=3)
        pairs = [(prepend_control_token(s, mode), t) for s, t, mode in data]
        model = small(Vocab.build([s for s, _ in pairs], controls=CONTROL_TOKENS),
                      Vocab.build([t for _, t in pairs]))
        assert not any(tok in model.tgt_vocab for tok in CONTROL_TOKENS)


class TestPostEditing:
    def test_multisource_beats_hypothesis_only_early(self):
        train_set = toy.post_edit_corpus(800, 15, seed=4)
        dev_set = toy.post_edit_corpus(150, 15, seed=5)
        tgt_vocab = Vocab.build([r for _, _, r in train_set])
        curves = {}
        for name, build in (("multi", lambda s, h: build_multisource_pair(s, h)), ("hyp", lambda s, h: list(h))):
            tr = [(build(s, h), r) for s, h, r in train_set]
            dv = [(build(s, h), r) for s, h, r in dev_set]
            model = small(Vocab.build([s for s, _ in tr], controls=(SEPARATOR,)), tgt_vocab, seed=4)
            reports = fit(model, make_examples(model, tr), 4, dev=make_examples(model, dv))
            curves[name] = [r.dev_ppl for r in reports]
        assert all(m < h for m, h in zip(curves["multi"][1:], curves["hyp"][1:])), curves
