"""Two deployment tricks on one small model: LM fusion and magnitude pruning.

First a target-side n-gram LM plus a bilingual dictionary fill in a word the
translation model has never seen.  Then the same model is pruned, retrained
with its mask held fixed, and decoded through compressed sparse columns.

    python3 demos/fusion_and_pruning.py
"""

import numpy as np

from desknmt import toy
from desknmt.compression import magnitude_prune, retrain_pruned, sparse_infer
from desknmt.decoding import batch_translate, beam_search, lm_train
from desknmt.model import ModelConfig, NmtModel
from desknmt.training import TrainConfig, make_examples, train
from desknmt.vocab import Vocab


def as_seen(model, sentence):
    # the reference as the model can spell it
    return [model.tgt_vocab.tokens[i] for i in model.tgt_vocab.encode(sentence)]


def accuracy(model, dev, results=None):
    results = results or batch_translate(model, dev, 1, 64)
    return np.mean([r.best.words == as_seen(model, s) for r, s in zip(results, dev)])


def main():
    corpus = toy.copy_corpus(800, 12, seed=3)
    dev = toy.copy_corpus(100, 12, seed=4)
    # a capped vocabulary turns the two rarest words into <unk>, so the model
    # learns to copy unknown words through as <unk>
    vocab = Vocab.build(corpus, max_size=14)
    cfg = ModelConfig(num_layers=1, rnn_size=64, embed_size=64, dropout=0.0, init_scale=0.3)
    model = NmtModel(cfg, vocab, vocab, seed=3)
    examples = make_examples(model, [(s, s) for s in corpus])
    config = TrainConfig(epochs=15, batch_size=16, learning_rate=1.0, start_decay_epoch=100, w_ga=0.0)
    train(model, examples, config)
    print(f"dense model dev accuracy {accuracy(model, dev):.2f}")

    # "zebra" is outside the model's vocabulary; only the dictionary knows it
    source = ["w1", "zebra", "w3"]
    lm = lm_train(corpus + [["w1", "zebra", "w3"]] * 20, order=3, eos=True)
    plain = beam_search(model, source, 5)
    fused = beam_search(model, source, 5, lm=lm, beta=1.0, dictionary={"zebra": ["zebra"]})
    print(f"plain  : {' '.join(plain.best.words)}")
    print(f"fused  : {' '.join(fused.best.words)}")

    for fraction in (0.5, 0.7):
        pruned = model.clone()
        _, mask = magnitude_prune(pruned, fraction, "class-blind")
        before = accuracy(pruned, dev)
        retrain_pruned(pruned, mask, examples, 2, config)
        results, report = sparse_infer(pruned, dev, mask)
        after = accuracy(pruned, dev, results)
        print(f"pruned {fraction:.0%}: accuracy {before:.2f} -> {after:.2f} after retraining; "
              f"CCS {report['sparse_bytes']} bytes vs dense {report['dense_bytes']}")


if __name__ == "__main__":
    main()
