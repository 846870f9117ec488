"""Independent reference computations shared by several test modules."""

import numpy as np

from desknmt import tensor as T
from desknmt.vocab import BOS, EOS, PAD


def greedy_chain(model, source, max_len):
    """Argmax decoding one step at a time, without the beam machinery."""
    enc = model.encode_tokens(source)
    state = model.initial_state(enc)
    prev, ids = BOS, []
    with T.no_grad():
        for _ in range(max_len):
            state, out = model.step(state, np.array([prev]), enc)
            p = out.probs[0].astype(np.float64).copy()
            p[[PAD, BOS]] = -1
            prev = int(p.argmax())
            ids.append(prev)
            if prev == EOS:
                break
    return tuple(ids)


def exhaustive_best(model, source, max_len):
    """Best complete sequence by depth-first enumeration (branch and bound).

    Scores are sums of float64 log-probs; a sequence is complete at EOS or
    at ``max_len`` tokens.  Returns ``(ids, score)``.
    """
    enc = model.encode_tokens(source)
    best = [-np.inf, None]

    def visit(state, prev, ids, score):
        if score <= best[0]:
            return
        with T.no_grad():
            state, out = model.step(state, np.array([prev]), enc)
        with np.errstate(divide="ignore"):
            logp = np.log(out.probs[0].astype(np.float64))
        for tok in range(len(model.tgt_vocab)):
            if tok in (PAD, BOS):
                continue
            s, seq = score + logp[tok], ids + (tok,)
            if tok == EOS or len(seq) == max_len:
                if s > best[0]:
                    best[:] = [s, seq]
            else:
                visit(state, tok, seq, s)

    visit(model.initial_state(enc), BOS, (), 0.0)
    return best[1], best[0]


def sequence_accuracy(results, references) -> float:
    return sum(r.best.words == list(ref) for r, ref in zip(results, references)) / len(references)
