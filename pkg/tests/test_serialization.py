import struct

import numpy as np
import pytest

from desknmt import toy
from desknmt.compression import magnitude_prune
from desknmt.decoding import batch_translate
from desknmt.model import ModelConfig, NmtModel
from desknmt.serialization import (MAGIC, BadMagicError, ModelFileError, TruncatedFileError, VersionError,
                                   load_model, model_from_bytes, model_to_bytes, save_model)
from desknmt.training import make_examples, perplexity
from desknmt.vocab import CASE_FEATURE, Vocab


def make_model(seed=0, features=False, layers=2):
    corpus = toy.copy_corpus(20, 7, seed=seed)
    v = Vocab.build(corpus)
    specs = (CASE_FEATURE,) if features else ()
    cfg = ModelConfig(num_layers=layers, rnn_size=8, embed_size=6, dropout=0.0, init_scale=0.5)
    return NmtModel(cfg, v, v, specs, specs, seed=seed), corpus


class TestRoundTrip:
    def test_save_load_save_bytes(self, tmp_path):
        m, _ = make_model(features=True)
        m.frozen_rows["src_emb"] = np.array([4, 6])
        magnitude_prune(m, 0.3)
        save_model(m, tmp_path / "a")
        save_model(load_model(tmp_path / "a"), tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_loaded_model_identical(self):
        m, corpus = make_model(seed=3)
        back = model_from_bytes(model_to_bytes(m))
        for k, p in m.params.items():
            np.testing.assert_array_equal(back.params[k].data, p.data)
        assert back.src_vocab.tokens == m.src_vocab.tokens
        a = batch_translate(m, corpus, 3, 4, max_len=10)
        b = batch_translate(back, corpus, 3, 4, max_len=10)
        assert [r.best.ids for r in a] == [r.best.ids for r in b]
        ex = make_examples(m, [(s, s) for s in corpus])
        assert perplexity(back, make_examples(back, [(s, s) for s in corpus])) == perplexity(m, ex)

    def test_masks_and_frozen_rows_survive(self):
        m, _ = make_model()
        m.frozen_rows["tgt_emb"] = np.array([5])
        _, mask = magnitude_prune(m, 0.5)
        back = model_from_bytes(model_to_bytes(m))
        for k, v in mask.masks.items():
            np.testing.assert_array_equal(back.masks[k].astype(bool), v)
        np.testing.assert_array_equal(back.frozen_rows["tgt_emb"], [5])

    def test_features_survive(self):
        m, _ = make_model(features=True)
        back = model_from_bytes(model_to_bytes(m))
        assert back.src_feature_specs == m.src_feature_specs
        assert back.tgt_feature_specs == m.tgt_feature_specs

    @pytest.mark.parametrize("seed", range(5))
    def test_random_models(self, seed):
        m, _ = make_model(seed=seed, layers=1 + seed % 3, features=bool(seed % 2))
        data = model_to_bytes(m)
        assert model_to_bytes(model_from_bytes(data)) == data


class TestErrors:
    def test_bad_magic(self):
        m, _ = make_model()
        data = model_to_bytes(m)
        with pytest.raises(BadMagicError) as exc:
            model_from_bytes(b"XXXX" + data[4:])
        assert exc.value.code == "E_MAGIC"

    def test_version(self):
        m, _ = make_model()
        data = model_to_bytes(m)
        with pytest.raises(VersionError) as exc:
            model_from_bytes(MAGIC + struct.pack("<I", 2) + data[8:])
        assert exc.value.code == "E_VERSION"

    def test_every_truncation(self):
        m, _ = make_model(layers=1)
        data = model_to_bytes(m)
        for n in range(len(data)):
            with pytest.raises(TruncatedFileError) as exc:
                model_from_bytes(data[:n])
            assert exc.value.code == "E_TRUNCATED"

    def test_trailing_bytes(self):
        m, _ = make_model()
        with pytest.raises(ModelFileError):
            model_from_bytes(model_to_bytes(m) + b"\0")

    def test_codes_distinct(self):
        codes = {c.code for c in (ModelFileError, BadMagicError, VersionError, TruncatedFileError)}
        assert len(codes) == 4
