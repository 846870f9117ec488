"""``desknmt`` command-line tool.

Exit status: 0 on success, 1 on runtime errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import aligner, evaluation, subword, textproc
from . import tensor as T
from .config import ConfigError, RunConfig
from .decoding import (EnsembleSet, NGramLM, PlaceholderConstraint, batch_translate,
                       format_nbest, lm_train, read_dictionary, replace_unknown)
from .model import NmtModel, prepend_control_token
from .placeholders import (DigitRegroupRule, Lexicon, PLACEHOLDER_TOKENS, build_training_mix,
                           recognize, restore, substitute)
from .serialization import ModelFileError, load_model, save_model
from .training import adapt, distill_prepare, make_examples, perplexity, train
from .vocab import CASE_FEATURE, CONTROL_TOKENS, Vocab

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    pass


# -- file helpers -------------------------------------------------------------------


def _read_lines(path) -> list[str]:
    if path in (None, "-"):
        return sys.stdin.read().splitlines()
    return Path(path).read_text(encoding="utf-8").splitlines()


def _write_lines(path, lines) -> None:
    text = "".join(line + "\n" for line in lines)
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text, encoding="utf-8")


def _read_tokens(path) -> list[list[str]]:
    return [line.split() for line in _read_lines(path)]


def _pairs(args):
    src, tgt = _read_tokens(args.src), _read_tokens(args.tgt)
    if len(src) != len(tgt):
        raise ValueError(f"{args.src} has {len(src)} lines but {args.tgt} has {len(tgt)}")
    return list(zip(src, tgt))


def _log(line: str) -> None:
    print(line, file=sys.stderr, flush=True)


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _run_config(args) -> RunConfig:
    overrides = _overrides(getattr(args, "set", None))
    for key in ("epochs", "seed", "batch_size", "learning_rate"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return RunConfig.load(getattr(args, "config", None), overrides)


def _case_split_corpus(sentences):
    words, feats = [], []
    for s in sentences:
        w, c = textproc.case_split(s)
        words.append(w)
        feats.append([[v.value for v in c]])
    return words, feats


def _examples(model: NmtModel, pairs, alignments=None):
    src = [p[0] for p in pairs]
    tgt = [p[1] for p in pairs]
    src_feats = tgt_feats = None
    if model.src_feature_specs:
        src, src_feats = _case_split_corpus(src)
    if model.tgt_feature_specs:
        tgt, tgt_feats = _case_split_corpus(tgt)
    return make_examples(model, list(zip(src, tgt)), src_feats, tgt_feats, alignments)


def _alignments(path, pairs):
    if not path:
        return None
    return aligner.read_pharaoh(path, [(len(s), len(t)) for s, t in pairs])


# -- commands -------------------------------------------------------------------------


def cmd_tokenize(args):
    _write_lines(args.output, [textproc.tokens_to_line(textproc.tokenize(line))
                               for line in _read_lines(args.input)])


def cmd_detokenize(args):
    _write_lines(args.output, [textproc.detokenize(textproc.line_to_tokens(line))
                               for line in _read_lines(args.input)])


def cmd_bpe_learn(args):
    freqs: dict[str, int] = {}
    for sent in _read_tokens(args.input):
        for tok in sent:
            freqs[tok] = freqs.get(tok, 0) + 1
    subword.bpe_learn(freqs, args.merges).save(args.output)


def cmd_bpe_apply(args):
    table = subword.MergeTable.load(args.codes)
    _write_lines(args.output, [" ".join(subword.bpe_apply_sentence(s, table))
                               for s in _read_tokens(args.input)])


def cmd_align(args):
    pairs = _pairs(args)
    aligner.write_pharaoh(args.output, aligner.align_corpus(pairs, args.iterations))


def cmd_ph_prepare(args):
    pairs = _pairs(args)
    links = _alignments(args.align, pairs)
    lexicon = Lexicon.load(args.lexicon) if args.lexicon else None
    out, records = build_training_mix(pairs, links, lexicon, args.ratio, args.seed)
    _write_lines(args.out_src, [" ".join(s) for s, _ in out])
    _write_lines(args.out_tgt, [" ".join(t) for _, t in out])
    if args.records:
        _write_lines(args.records, ["" if r is None else r.to_line() for r in records])


def cmd_train(args):
    cfg = _run_config(args)
    pairs = _pairs(args)
    src_sents = [p[0] for p in pairs]
    tgt_sents = [p[1] for p in pairs]
    specs = (CASE_FEATURE,) if cfg.case_features else ()
    if cfg.case_features:
        src_sents = _case_split_corpus(src_sents)[0]
        tgt_sents = _case_split_corpus(tgt_sents)[0]
    controls = [t for t in CONTROL_TOKENS if any(t in s for s in src_sents)]
    src_vocab = Vocab.build(src_sents, cfg.src_vocab_size, controls=controls,
                            placeholders=PLACEHOLDER_TOKENS)
    tgt_vocab = Vocab.build(tgt_sents, cfg.tgt_vocab_size, placeholders=PLACEHOLDER_TOKENS)
    model = NmtModel(cfg.model_config(), src_vocab, tgt_vocab, specs, specs, seed=cfg.seed)
    examples = _examples(model, pairs, _alignments(args.align, pairs))
    dev = _examples(model, list(zip(_read_tokens(args.dev_src), _read_tokens(args.dev_tgt)))) \
        if args.dev_src else None
    train(model, examples, cfg.train_config(), dev=dev, log=_log)
    save_model(model, args.output)


def cmd_adapt(args):
    cfg = _run_config(args)
    model = load_model(args.model)
    examples = _examples(model, _pairs(args))
    _, report = adapt(model, examples, args.epochs, cfg.train_config(w_ga=0.0), dev_in=examples, log=_log)
    _log(f"in-domain ppl {report['in_domain_before']:.4f} -> {report['in_domain_after']:.4f}")
    save_model(model, args.output)


def cmd_retrain(args):
    from .compression import PruneMask, retrain_pruned

    cfg = _run_config(args)
    model = load_model(args.model)
    retrain_pruned(model, PruneMask.from_model(model), _examples(model, _pairs(args)), args.epochs,
                   cfg.train_config(w_ga=0.0), log=_log)
    save_model(model, args.output)


def cmd_prune(args):
    from .compression import magnitude_prune

    model = load_model(args.model)
    _, mask = magnitude_prune(model, args.fraction, args.scope)
    _log(f"kept fraction {mask.kept_fraction:.4f}")
    save_model(model, args.output)


def _load_models(args):
    paths = args.ensemble.split(",") if args.ensemble else [args.model]
    if not paths or not paths[0]:
        raise UsageError("translate needs --model or --ensemble")
    models = [load_model(p) for p in paths]
    return models[0] if len(models) == 1 else EnsembleSet(models)


def cmd_translate(args):
    model = _load_models(args)
    first = model.models[0] if isinstance(model, EnsembleSet) else model
    lines = _read_lines(args.input)
    if args.tokenized:
        sources = [line.split() for line in lines]
    else:
        sources = [textproc.tokens_to_line(textproc.tokenize(line)).split() for line in lines]
    table = subword.MergeTable.load(args.bpe) if args.bpe else None
    lexicon = Lexicon.load(args.lexicon) if args.lexicon else None
    records = [None] * len(sources)
    if args.placeholders:
        for i, s in enumerate(sources):
            sources[i], records[i] = substitute(s, recognize(s, lexicon))
    if table is not None:
        sources = [subword.bpe_apply_sentence(s, table) for s in sources]
    sources = [prepend_control_token(s, args.politeness) for s in sources]
    feats = None
    if first.src_feature_specs:
        sources, feats = _case_split_corpus(sources)
    dictionary = read_dictionary(args.dict) if args.dict else None
    lm = NGramLM.load(args.lm) if args.lm else None
    constraint = PlaceholderConstraint(first.tgt_vocab)
    results = batch_translate(model, sources, beam_size=args.beam, batch_size=args.batch,
                              max_len=args.max_len, n_best=max(args.nbest, 1), constraint=constraint,
                              src_feats=feats, lm=lm, beta=args.beta, dictionary=dictionary)
    out = []
    for i, (src, res) in enumerate(zip(sources, results)):
        hyps = res.nbest if args.nbest else [res.best]
        for h in hyps:
            words = replace_unknown(h, src, dictionary) if args.replace_unk else list(h.words)
            if first.tgt_feature_specs:
                cases = [CASE_FEATURE.values[k] for k in h.word_features()[0]]
                words = textproc.case_restore(words, cases)
            if table is not None:
                words = subword.bpe_decode(words)
            if records[i] is not None:
                rules = [DigitRegroupRule()] if args.regroup else []
                words = restore(words, records[i], h.attention, rules).tokens
            h.words = words
        if args.nbest:
            out.extend(format_nbest(i, hyps))
        elif args.tokenized:
            out.append(" ".join(res.best.words))
        else:
            out.append(textproc.detokenize(textproc.line_to_tokens(" ".join(res.best.words))))
    _write_lines(args.output, out)


def cmd_distill_prepare(args):
    model = load_model(args.model)
    sources, refs = _read_tokens(args.src), _read_tokens(args.ref)
    corpus = distill_prepare(model, sources, refs, args.nbest, beam_size=args.beam)
    _write_lines(args.out_src, [" ".join(s) for s, _ in corpus])
    _write_lines(args.out_tgt, [" ".join(t) for _, t in corpus])


def cmd_lm_train(args):
    lm_train(_read_tokens(args.input), args.order, eos=args.eos).save(args.output)


def cmd_eval_bleu(args):
    hyp, ref = _read_lines(args.hyp), _read_lines(args.ref)
    print(f"BLEU = {evaluation.bleu(hyp, ref, lowercase=args.lowercase):.2f}")


def cmd_eval_ppl(args):
    model = load_model(args.model)
    print(f"PPL = {perplexity(model, _examples(model, _pairs(args))):.4f}")


def cmd_grad_check(args):
    from .aligner import AlignmentMatrix
    from .model import ModelConfig
    from .training import forward_losses, make_batch

    with T.float64_mode():
        words = [f"w{i}" for i in range(6)]
        rng = np.random.default_rng(args.seed)
        sents = [[str(rng.choice(words)).capitalize() if rng.random() < 0.3 else str(rng.choice(words))
                  for _ in range(int(rng.integers(2, 5)))] for _ in range(3)]
        vocab = Vocab.build([words])
        cfg = ModelConfig(num_layers=args.layers, rnn_size=args.rnn_size, embed_size=args.rnn_size,
                          dropout=0.0, init_scale=0.5)
        model = NmtModel(cfg, vocab, vocab, (CASE_FEATURE,), (CASE_FEATURE,), seed=args.seed)
        aligns = [AlignmentMatrix.from_links([(i, i) for i in range(len(s))], len(s), len(s)) for s in sents]
        batch = make_batch(model, _examples(model, [(s, s) for s in sents], aligns))
        errs = T.grad_check(model.graph, lambda: forward_losses(model, batch, 0.5, 1.0)[0],
                            max_coords=args.coords)
    worst = max(errs.values())
    for name, e in errs.items():
        print(f"{name}\t{e:.3e}")
    print(f"max relative error {worst:.3e} ({'ok' if worst <= args.tolerance else 'FAILED'})")
    return 0 if worst <= args.tolerance else 1


# -- parser ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _train_flags(p):
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="desknmt", description="Desk-scale neural machine translation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("tokenize", help="reversible tokenization of raw text")
    p.add_argument("-i", "--input", default="-")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("detokenize", help="undo tokenize")
    p.add_argument("-i", "--input", default="-")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_detokenize)

    p = sub.add_parser("bpe-learn", help="learn BPE merges from tokenized text")
    p.add_argument("-i", "--input", default="-")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--merges", type=int, required=True)
    p.set_defaults(func=cmd_bpe_learn)

    p = sub.add_parser("bpe-apply", help="segment tokenized text with learned merges")
    p.add_argument("--codes", required=True)
    p.add_argument("-i", "--input", default="-")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_bpe_apply)

    p = sub.add_parser("align", help="IBM-1 word alignment to Pharaoh format")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--iterations", type=int, default=5)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("ph-prepare", help="substitute entity placeholders in a parallel corpus")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--align", required=True)
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.add_argument("--records")
    p.add_argument("--lexicon")
    p.add_argument("--ratio", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ph_prepare)

    p = sub.add_parser("train", help="train a model from tokenized parallel files")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--align")
    p.add_argument("--dev-src")
    p.add_argument("--dev-tgt")
    p.add_argument("-o", "--output", required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("adapt", cmd_adapt, "continue training on in-domain data"),
                              ("retrain", cmd_retrain, "retrain a pruned model, keeping its mask")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--model", required=True)
        p.add_argument("--src", required=True)
        p.add_argument("--tgt", required=True)
        p.add_argument("-o", "--output", required=True)
        _train_flags(p)
        p.set_defaults(func=func, epochs=1)

    p = sub.add_parser("translate", help="translate text")
    p.add_argument("--model")
    p.add_argument("--ensemble", help="comma-separated model files")
    p.add_argument("-i", "--input", default="-")
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--max-len", type=int, default=100)
    p.add_argument("--lm")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--dict")
    p.add_argument("--politeness", choices=("formal", "informal", "neutral"))
    p.add_argument("--nbest", type=int, default=0)
    p.add_argument("--replace-unk", action="store_true")
    p.add_argument("--tokenized", action="store_true", help="input is already tokenized; output stays tokenized")
    p.add_argument("--bpe", help="merge table applied to the source")
    p.add_argument("--placeholders", action="store_true")
    p.add_argument("--lexicon")
    p.add_argument("--regroup", action="store_true", help="apply the number regrouping rule")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("prune", help="magnitude pruning")
    p.add_argument("--model", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--scope", choices=("class-blind", "class-uniform"), default="class-blind")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("distill-prepare", help="build a distillation corpus from teacher n-best lists")
    p.add_argument("--model", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--nbest", type=int, default=5)
    p.add_argument("--beam", type=int)
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.set_defaults(func=cmd_distill_prepare)

    p = sub.add_parser("lm-train", help="count an n-gram language model")
    p.add_argument("-i", "--input", default="-")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--eos", action="store_true")
    p.set_defaults(func=cmd_lm_train)

    p = sub.add_parser("eval-bleu", help="corpus BLEU of hypothesis vs reference file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--lowercase", action="store_true")
    p.set_defaults(func=cmd_eval_bleu)

    p = sub.add_parser("eval-ppl", help="model perplexity on a parallel corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.set_defaults(func=cmd_eval_ppl)

    p = sub.add_parser("grad-check", help="finite-difference check of all gradients")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--rnn-size", type=int, default=8)
    p.add_argument("--coords", type=int, default=10, help="sampled coordinates per parameter")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        status = args.func(args)
        return int(status or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"desknmt: configuration error: {exc}", file=sys.stderr)
        return 2
    except ModelFileError as exc:
        print(f"desknmt: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, RuntimeError, FloatingPointError) as exc:
        print(f"desknmt: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
