import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desknmt.evaluation import BleuStats, bleu, ngram_stats, sentence_bleu


def oracle_bleu(hyps, refs):
    """Textbook BLEU-4 written out longhand."""
    matches, totals = [0] * 4, [0] * 4
    hl = rl = 0
    for h, r in zip(hyps, refs):
        h, r = h.split(), r.split()
        hl, rl = hl + len(h), rl + len(r)
        for n in range(1, 5):
            hc = Counter(tuple(h[i:i + n]) for i in range(len(h) - n + 1))
            rc = Counter(tuple(r[i:i + n]) for i in range(len(r) - n + 1))
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(0, len(h) - n + 1)
    if min(matches) == 0:
        return 0.0
    bp = 1.0 if hl >= rl else math.exp(1 - rl / hl)
    return 100 * bp * math.exp(sum(math.log(m / t) for m, t in zip(matches, totals)) / 4)


class TestBleu:
    def test_identical(self):
        lines = ["a b c d e", "the cat sat on the mat"]
        assert bleu(lines, lines) == 100.0

    def test_clipped_unigram_precision(self):
        # "the" appears once in the reference, so only one of the four counts
        s = ngram_stats(["the the the the"], ["the cat"])
        assert s.precisions()[0] == 1 / 4

    def test_empty_set(self):
        with pytest.raises(ValueError):
            bleu([], [])

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            bleu(["a"], ["a", "b"])

    def test_brevity_penalty(self):
        s = BleuStats()
        s.add("a b".split(), "a b c d".split())
        assert s.brevity_penalty() == pytest.approx(math.exp(1 - 2))

    def test_lowercase(self):
        assert bleu(["The Cat sat down ."], ["the cat sat down ."], lowercase=True) == 100.0
        assert bleu(["The Cat sat down ."], ["the cat sat down ."]) < 100.0

    def test_sentence_bleu_smoothed(self):
        assert 0 < sentence_bleu("a b", "a c") < 100

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.lists(st.sampled_from("abcde"), min_size=1, max_size=9),
                              st.lists(st.sampled_from("abcde"), min_size=1, max_size=9)),
                    min_size=1, max_size=5))
    def test_matches_oracle(self, pairs):
        hyps = [" ".join(h) for h, _ in pairs]
        refs = [" ".join(r) for _, r in pairs]
        score = bleu(hyps, refs)
        assert 0.0 <= score <= 100.0
        assert score == pytest.approx(oracle_bleu(hyps, refs), abs=1e-9)
