"""Train a small attention model on the copy task and watch it learn.

The copy task (output = input) is the simplest sequence task that still needs
attention: the decoder has to find the right source position at every step.
Guided alignment supervises that search directly, so the second run usually
gets there in fewer epochs.

    python3 demos/copy_task.py --epochs 16
"""

import argparse

from desknmt import toy
from desknmt.aligner import AlignmentMatrix
from desknmt.decoding import batch_translate
from desknmt.model import ModelConfig, NmtModel
from desknmt.training import TrainConfig, make_examples, train
from desknmt.vocab import Vocab


def dev_accuracy(model, dev):
    results = batch_translate(model, dev, beam_size=1, batch_size=64)
    return sum(r.best.words == s for r, s in zip(results, dev)) / len(dev)


def run(w_ga, args):
    corpus = toy.copy_corpus(args.sentences, args.vocab, 3, 8, seed=args.seed)
    dev = toy.copy_corpus(100, args.vocab, 3, 8, seed=args.seed + 1)
    vocab = Vocab.build(corpus)
    cfg = ModelConfig(num_layers=1, rnn_size=32, embed_size=32, dropout=0.0, init_scale=0.3)
    model = NmtModel(cfg, vocab, vocab, seed=args.seed)
    diagonal = [AlignmentMatrix.from_links([(i, i) for i in range(len(s))], len(s), len(s)) for s in corpus]
    examples = make_examples(model, [(s, s) for s in corpus], alignments=diagonal)

    def report(r, m):
        print(f"  epoch {r.epoch:2d}  ppl {r.ppl:.3f}  L_ga {r.L_ga:.4f}  dev acc {dev_accuracy(m, dev):.2f}")
        return False

    print(f"w_ga = {w_ga}")
    train(model, examples, TrainConfig(epochs=args.epochs, batch_size=32, learning_rate=1.0,
                                       start_decay_epoch=100, w_ga=w_ga), callback=report)
    return model, dev


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=16)
    ap.add_argument("--sentences", type=int, default=1000)
    ap.add_argument("--vocab", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    run(0.0, args)
    model, dev = run(0.5, args)
    print("\nsample decodes from the guided model:")
    for r in batch_translate(model, dev[:5], beam_size=5):
        print(f"  {' '.join(r.source):30s} -> {' '.join(r.best.words)}")


if __name__ == "__main__":
    main()
