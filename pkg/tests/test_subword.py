import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desknmt.subword import MergeTable, bpe_apply, bpe_decode, bpe_learn

TOY = {"low": 5, "lower": 2, "newest": 6, "widest": 3}


def brute_force_learn(freqs, n):
    """Recount every pair from scratch at every step."""
    words = {tuple(w): f for w, f in freqs.items()}
    merges = []
    for _ in range(n):
        counts = Counter()
        for w, f in words.items():
            for i in range(len(w) - 1):
                counts[(w[i], w[i + 1])] += f
        if not counts:
            break
        top = max(counts.values())
        best = min(p for p, c in counts.items() if c == top)
        merges.append(best)
        new_words = Counter()
        for w, f in words.items():
            out, i = [], 0
            while i < len(w):
                if i + 1 < len(w) and (w[i], w[i + 1]) == best:
                    out.append(w[i] + w[i + 1])
                    i += 2
                else:
                    out.append(w[i])
                    i += 1
            new_words[tuple(out)] += f
        words = new_words
    return merges


def random_corpus(rng, n_words=60, alphabet="abcde"):
    return {"".join(rng.choice(alphabet) for _ in range(rng.randint(1, 7))): rng.randint(1, 9)
            for _ in range(n_words)}


class TestLearn:
    def test_zero_merges(self):
        table = bpe_learn(TOY, 0)
        assert len(table) == 0
        assert bpe_apply("low", table) == ["l@@", "o@@", "w"]

    def test_first_merge_is_count_nine(self):
        counts = Counter()
        for w, f in TOY.items():
            for i in range(len(w) - 1):
                counts[(w[i], w[i + 1])] += f
        assert max(counts.values()) == 9
        # ('e','s') and ('s','t') both reach 9; the smaller pair wins
        assert bpe_learn(TOY, 1).merges[0] == ("e", "s")

    def test_tie_rule(self):
        assert bpe_learn({"ab": 1, "cd": 1}, 1).merges == [("a", "b")]

    def test_empty_corpus(self):
        assert len(bpe_learn({}, 5)) == 0

    def test_stops_when_exhausted(self):
        assert len(bpe_learn({"abc": 1}, 10)) == 2

    def test_negative(self):
        with pytest.raises(ValueError):
            bpe_learn(TOY, -1)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        corpus = random_corpus(random.Random(seed))
        assert bpe_learn(corpus, 30).merges == brute_force_learn(corpus, 30)

    def test_deterministic(self):
        corpus = random_corpus(random.Random(3))
        assert bpe_learn(corpus, 25).merges == bpe_learn(dict(reversed(list(corpus.items()))), 25).merges


class TestApply:
    def test_empty_table(self):
        assert bpe_apply("abc", MergeTable()) == ["a@@", "b@@", "c"]

    def test_fully_merged_training_word(self):
        table = bpe_learn(TOY, 20)
        for word in TOY:
            assert bpe_apply(word, table) == [word]

    def test_no_oov_pieces_on_training_corpus(self):
        corpus = random_corpus(random.Random(11), 200)
        table = bpe_learn(corpus, 40)
        known = {ch for w in corpus for ch in w} | table.symbols()
        for w in corpus:
            for piece in bpe_apply(w, table):
                assert piece.removesuffix("@@") in known

    def test_round_trip_10k_tokens(self):
        rng = random.Random(5)
        table = bpe_learn(random_corpus(rng, 300, "abcdefg"), 80)
        for _ in range(10_000):
            tok = "".join(rng.choice("abcdefgxyz") for _ in range(rng.randint(1, 12)))
            pieces = bpe_apply(tok, table)
            assert "".join(p.removesuffix("@@") for p in pieces) == tok
            assert bpe_decode(pieces) == [tok]

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.text(alphabet="abcxyz", min_size=1, max_size=6), min_size=1, max_size=20),
           st.integers(0, 30),
           st.lists(st.text(alphabet="abcdxyzé", min_size=1, max_size=10), min_size=1, max_size=10))
    def test_decode_inverts_apply(self, train, n, sentence):
        table = bpe_learn(Counter(train), n)
        pieces = [p for tok in sentence for p in bpe_apply(tok, table)]
        assert bpe_decode(pieces) == sentence


class TestDecode:
    def test_join(self):
        assert bpe_decode(["a@@", "b"]) == ["ab"]

    def test_identity(self):
        assert bpe_decode(["x"]) == ["x"]

    def test_dangling_marker(self):
        with pytest.warns(UserWarning):
            assert bpe_decode(["a", "b@@"]) == ["a", "b"]


class TestFile:
    def test_save_load(self, tmp_path):
        table = bpe_learn(TOY, 7)
        path = tmp_path / "codes"
        table.save(path)
        assert path.read_text().splitlines()[0] == "#bpe-v1 7"
        assert MergeTable.load(path).merges == table.merges

    def test_bad_header(self, tmp_path):
        path = tmp_path / "codes"
        path.write_text("a b\n")
        with pytest.raises(ValueError):
            MergeTable.load(path)
