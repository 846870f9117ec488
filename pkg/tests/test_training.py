import math

import numpy as np
import pytest

from desknmt import tensor as T
from desknmt import toy
from desknmt.aligner import AlignmentMatrix
from desknmt.model import ModelConfig, NmtModel
from desknmt.training import (EpochReport, TrainConfig, adapt, build_multisource_pair, distill_prepare,
                              forward_losses, guided_alignment_loss, make_batch, make_examples, nll_loss,
                              perplexity, sgd_step, train)
from desknmt.vocab import CASE_FEATURE, SEPARATOR, Vocab


def copy_setup(n=40, words=8, layers=1, size=16, seed=0, aligned=False, dtype=None):
    corpus = toy.copy_corpus(n, words, min_len=2, max_len=5, seed=seed)
    vocab = Vocab.build(corpus)
    cfg = ModelConfig(num_layers=layers, rnn_size=size, embed_size=size, dropout=0.0, init_scale=0.3)
    model = NmtModel(cfg, vocab, vocab, seed=seed, dtype=dtype)
    aligns = [AlignmentMatrix.from_links([(i, i) for i in range(len(s))], len(s), len(s)) for s in corpus] \
        if aligned else None
    return model, make_examples(model, [(s, s) for s in corpus], alignments=aligns)


class TestNll:
    def test_perfect_prediction_is_zero(self):
        logits = T.constant(np.array([[[100.0, 0, 0], [0, 100.0, 0]]]))
        loss = nll_loss(logits, np.array([[0, 1]]), np.ones((1, 2), bool))
        assert float(loss.data) < 1e-30

    def test_uniform_is_log_v(self):
        loss = nll_loss(T.constant(np.zeros((2, 3, 7))), np.zeros((2, 3), int), np.ones((2, 3), bool))
        assert math.isclose(float(loss.data), math.log(7), rel_tol=1e-6)

    def test_padding_ignored(self):
        logits = T.constant(np.array([[[5.0, 0], [0, 5.0]]]))
        mask = np.array([[True, False]])
        a = nll_loss(logits, np.array([[0, 0]]), mask)
        b = nll_loss(logits, np.array([[0, 1]]), mask)
        assert float(a.data) == float(b.data)


class TestGuidedAlignmentLoss:
    def test_equal_is_zero(self):
        A = np.eye(3)
        assert float(guided_alignment_loss(A, T.constant(A)).data) == 0

    def test_single_cell(self):
        assert float(guided_alignment_loss([[1.0]], T.constant(np.array([[0.5]]))).data) == 0.25

    def test_identity_vs_uniform(self):
        alpha = T.constant(np.full((2, 2), 0.5))
        assert math.isclose(float(guided_alignment_loss(np.eye(2), alpha).data), 0.5)

    def test_unaligned_rows_skipped(self):
        A = np.array([[1.0, 0], [0, 0]])
        alpha = T.constant(np.array([[0.5, 0.5], [0.9, 0.1]]))
        # only row 0 counts: (0.25 + 0.25) / 1
        assert math.isclose(float(guided_alignment_loss(A, alpha).data), 0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            guided_alignment_loss(np.eye(2), T.constant(np.eye(3)))


class TestBatching:
    def test_feature_shift(self):
        vocab = Vocab(["a", "b"])
        m = NmtModel(ModelConfig(num_layers=1, rnn_size=4, embed_size=4), vocab, vocab,
                     (CASE_FEATURE,), (CASE_FEATURE,))
        ex = make_examples(m, [(["a", "b"], ["a", "b"])], [[["C", "L"]]], [[["C", "L"]]])
        b = make_batch(m, ex)
        N, C, L = (CASE_FEATURE.index(x) for x in "NCL")
        assert b.feat_out[0].tolist() == [[N, C, L]]
        assert b.feat_in[0].tolist() == [[N, N, C]]
        assert b.tgt_mask.tolist() == [[True, True, True]]

    def test_alignment_shape_checked(self):
        m, _ = copy_setup()
        ex = make_examples(m, [(["w1", "w2"], ["w1"])], alignments=[AlignmentMatrix.from_links([(0, 0)], 2, 2)])
        with pytest.raises(ValueError):
            make_batch(m, ex)


class TestLossCombination:
    def test_zero_weights_give_l_dec(self):
        m, ex = copy_setup(aligned=True)
        b = make_batch(m, ex[:4])
        total, br, _ = forward_losses(m, b, w_ga=0.0, feat_weight=0.0)
        assert float(total.data) == br.L_dec

    def test_linear_combination(self):
        with T.float64_mode():
            m, ex = copy_setup(aligned=True, dtype=np.float64)
            b = make_batch(m, ex[:4])
            total, br, _ = forward_losses(m, b, w_ga=0.3)
        assert math.isclose(br.L_total, 0.3 * br.L_ga + 0.7 * br.L_dec, rel_tol=1e-12)
        assert min(br.L_dec, br.L_ga, br.L_feat) >= 0

    def test_zero_w_ga_same_trajectory_as_no_alignments(self):
        m1, ex1 = copy_setup(aligned=True)
        m2, ex2 = copy_setup(aligned=False)
        cfg = TrainConfig(epochs=2, batch_size=8, w_ga=0.0)
        train(m1, ex1, cfg)
        train(m2, ex2, cfg)
        for name in m1.params:
            np.testing.assert_array_equal(m1.p(name).data, m2.p(name).data)


class TestSgd:
    def test_first_order_decrease(self):
        with T.float64_mode():
            m, ex = copy_setup(dtype=np.float64)
            b = make_batch(m, ex[:6])
            loss0 = forward_losses(m, b)[0]
            T.backward(m.graph, loss0)
            g2 = sum(float((p.grad ** 2).sum()) for p in m.params.values())
            eps = 1e-4
            sgd_step(m, eps, max_grad_norm=None)
            loss1 = float(forward_losses(m, b)[0].data)
        predicted = -eps * g2
        assert math.isclose(loss1 - float(loss0.data), predicted, rel_tol=1e-2)

    def test_clipping(self):
        m, ex = copy_setup()
        T.backward(m.graph, forward_losses(m, make_batch(m, ex[:6]))[0])
        for p in m.params.values():
            p.grad *= 1000
        before = {k: p.data.copy() for k, p in m.params.items()}
        norm = sgd_step(m, 1.0, 5.0)
        moved = math.sqrt(sum(float(((m.p(k).data - v).astype(np.float64) ** 2).sum()) for k, v in before.items()))
        assert norm > 5
        assert math.isclose(moved, 5.0, rel_tol=1e-3)


class TestTrainLoop:
    def test_schedules(self):
        m, ex = copy_setup(aligned=True)
        lines = []
        reports = train(m, ex, TrainConfig(epochs=4, batch_size=16, start_decay_epoch=2, w_ga=0.5), log=lines.append)
        assert [r.w_ga for r in reports] == pytest.approx([0.5, 0.45, 0.405, 0.3645])
        assert [r.lr for r in reports] == pytest.approx([1.0, 1.0, 0.7, 0.49])
        assert len(lines) == 4
        fields = lines[0].split("\t")
        assert len(fields) == 8 and fields[0] == "1"

    def test_empty_corpus(self):
        m, _ = copy_setup()
        with pytest.raises(ValueError):
            train(m, [], TrainConfig(epochs=1))

    def test_long_sentences_dropped(self):
        m, ex = copy_setup()
        with pytest.raises(ValueError):
            train(m, ex, TrainConfig(epochs=1, max_len=1))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(w_ga=1.5)
        with pytest.raises(ValueError):
            TrainConfig(decay=0)

    def test_reproducible_in_float64(self):
        with T.float64_mode():
            runs = []
            for _ in range(2):
                m, ex = copy_setup(dtype=np.float64)
                train(m, ex, TrainConfig(epochs=2, batch_size=8, seed=3, dropout=0.2, w_ga=0))
                runs.append({k: p.data.copy() for k, p in m.params.items()})
        for k in runs[0]:
            np.testing.assert_array_equal(runs[0][k], runs[1][k])

    def test_ppl_decreases_early(self):
        m, ex = copy_setup(n=80)
        reports = train(m, ex, TrainConfig(epochs=5, batch_size=8, learning_rate=0.5, w_ga=0), dev=ex[:20])
        dev = [r.dev_ppl for r in reports]
        assert all(b < a for a, b in zip(dev, dev[1:]))

    def test_guided_attention_mass_increases(self):
        m, ex = copy_setup(n=60, aligned=True)

        def mass():
            b = make_batch(m, ex)
            with T.no_grad():
                _, _, alpha = forward_losses(m, b, 0.5)
            return float((alpha.data * b.align).sum() / b.align_rows.sum())

        masses = [mass()]
        for epoch in range(3):
            train(m, ex, TrainConfig(epochs=1, batch_size=8, w_ga=0.5 * 0.9 ** epoch, seed=epoch))
            masses.append(mass())
        assert all(b > a for a, b in zip(masses, masses[1:]))

    def test_log_line_format(self):
        r = EpochReport(3, 2.5, 0.9, 0.1, 0.0, 1.0, 0.405, 1.25)
        assert r.log_line() == "3\t2.5000\t0.900000\t0.100000\t0.000000\t1\t0.405\t1.250"


class TestPerplexity:
    def test_uniform_model_is_vocab_size(self):
        m, ex = copy_setup()
        for name in ("gen.W", "gen.b"):
            m.p(name).data[...] = 0
        assert math.isclose(perplexity(m, ex), len(m.tgt_vocab), rel_tol=1e-5)

    def test_matches_exp_nll_on_a_batch(self):
        m, ex = copy_setup()
        same_len = [e for e in ex if len(e.src) == len(ex[0].src)]
        _, br, _ = forward_losses(m, make_batch(m, same_len))
        assert math.isclose(perplexity(m, same_len), math.exp(br.L_dec), rel_tol=1e-6)

    def test_empty(self):
        m, _ = copy_setup()
        with pytest.raises(ValueError):
            perplexity(m, [])


class TestAdapt:
    def test_zero_epochs_is_noop(self):
        m, ex = copy_setup()
        before = {k: p.data.copy() for k, p in m.params.items()}
        _, report = adapt(m, ex, 0, dev_in=ex)
        for k, v in before.items():
            assert np.array_equal(m.p(k).data, v)
        assert report["in_domain_before"] == report["in_domain_after"]

    def test_oov_maps_to_unk(self):
        m, _ = copy_setup()
        ex = make_examples(m, [(["brand-new"], ["w1"])])
        assert ex[0].src == [1]


class TestDistillPrepare:
    def test_n_best_one_is_teacher_output(self):
        from desknmt.decoding import batch_translate
        m, ex = copy_setup()
        sources = [["w1", "w2"], ["w3", "w1", "w0"]]
        corpus = distill_prepare(m, sources, sources, n_best=1)
        outs = batch_translate(m, sources, beam_size=1)
        assert [t for _, t in corpus] == [r.best.words for r in outs]

    def test_reference_in_nbest_is_selected(self):
        from desknmt.decoding import batch_translate
        m, _ = copy_setup(seed=4)
        sources = [["w1", "w2", "w3"]]
        nbest = batch_translate(m, sources, beam_size=4, n_best=4)[0].nbest
        ref = nbest[2].words
        corpus = distill_prepare(m, sources, [ref], n_best=4)
        assert corpus[0][1] == ref

    def test_bad_n_best(self):
        m, _ = copy_setup()
        with pytest.raises(ValueError):
            distill_prepare(m, [["w1"]], [["w1"]], 0)


class TestMultiSource:
    def test_concatenation(self):
        assert build_multisource_pair(["a"], ["b"]) == ["a", SEPARATOR, "b"]

    def test_empty(self):
        with pytest.raises(ValueError):
            build_multisource_pair([], ["b"])

    def test_separator_is_never_generated(self):
        from desknmt.decoding import batch_translate
        corpus = [build_multisource_pair(s, h) for s, h, _ in toy.post_edit_corpus(20, 6)]
        vocab = Vocab.build(corpus, controls=[SEPARATOR])
        tgt_vocab = Vocab.build([r for _, _, r in toy.post_edit_corpus(20, 6)])
        m = NmtModel(ModelConfig(num_layers=1, rnn_size=8, embed_size=8), vocab, tgt_vocab)
        assert SEPARATOR in vocab and SEPARATOR not in tgt_vocab
        out = batch_translate(m, corpus[:5], beam_size=2, max_len=6)
        assert all(SEPARATOR not in r.best.words for r in out)
