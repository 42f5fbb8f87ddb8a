import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdnpg.data import (
    RESERVED,
    Batch,
    DatasetError,
    ParaphrasePair,
    Vocabulary,
    build_vocab,
    detokenize,
    encode_source,
    encode_target,
    load_dataset,
    make_batch,
    make_batches,
    pad,
    split_pairs,
    tokenize,
    wordpiece_split,
)
from cdnpg.model import BOS, EOS, PAD, UNK


class TestTokenize:
    @pytest.mark.parametrize("text,expected", [
        ("What is AI?", ["what", "is", "ai", "?"]),
        ("", []),
        ("  Hello,   WORLD!! ", ["hello", ",", "world", "!", "!"]),
        ("don't", ["don", "'", "t"]),
        ("ｆｕｌｌｗｉｄｔｈ", ["fullwidth"]),
        ("Café au lait", ["café", "au", "lait"]),
    ])
    def test_examples(self, text, expected):
        assert tokenize(text) == expected

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=60))
    def test_idempotent_on_own_output(self, text):
        toks = tokenize(text)
        assert tokenize(detokenize(toks)) == toks


class TestVocabulary:
    def test_reserved_ids(self):
        v = Vocabulary()
        assert [v.id(t) for t in RESERVED] == [PAD, BOS, EOS, UNK]
        assert len(v) == 4

    def test_one_pair_corpus(self):
        pair = ParaphrasePair("the cat sat", "the cat slept")
        v = build_vocab([pair.source_tokens, pair.target_tokens])
        assert len(v) == 4 + 4
        assert v.itos[4:] == ["cat", "the", "sat", "slept"]

    def test_frequency_order_and_ties(self):
        v = build_vocab([["b", "a", "c", "a"], ["c", "d"]])
        assert v.itos[4:] == ["a", "c", "b", "d"]

    def test_min_freq_maps_to_unk(self):
        v = build_vocab([["a", "a", "rare"]], min_freq=2)
        assert v.encode(["a", "rare"]) == [4, UNK]

    def test_max_size(self):
        v = build_vocab([list("abcdefg")], max_size=6)
        assert len(v) == 6

    def test_deterministic(self):
        corpus = [tokenize("the cat and the dog"), tokenize("a dog and a cat")]
        assert build_vocab(corpus) == build_vocab(list(reversed(corpus)))

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            build_vocab([])

    def test_decode_stops_at_eos(self):
        v = Vocabulary(["x", "y"])
        assert v.decode([BOS, 4, PAD, 5, EOS, 4]) == ["x", "y"]
        assert v.decode([4, EOS], strip=False) == ["x", "<eos>"]
        assert v.token(99) == "<unk>"

    def test_save_load_round_trip(self, tmp_path):
        v = build_vocab([tokenize("a b b c c c")])
        v.save(tmp_path / "vocab.txt")
        assert (tmp_path / "vocab.txt").read_text().splitlines() == ["c", "b", "a"]
        assert Vocabulary.load(tmp_path / "vocab.txt") == v


class TestWordPiece:
    TABLE = {t: i for i, t in enumerate(["un", "##aff", "##able", "aff", "##a", "the"])}

    @pytest.mark.parametrize("word,pieces", [
        ("unaffable", ["un", "##aff", "##able"]),
        ("the", ["the"]),
        ("xyz", ["<unk>"]),
        ("una", ["un", "##a"]),
    ])
    def test_split(self, word, pieces):
        assert wordpiece_split(word, self.TABLE) == pieces

    def test_too_long(self):
        assert wordpiece_split("a" * 101, {"a": 0}) == ["<unk>"]

    def test_vocab_file(self, tmp_path):
        (tmp_path / "wp.txt").write_text("[PAD]\n[UNK]\nun\n##aff\n##able\nthe\n")
        v = Vocabulary.load_wordpiece(tmp_path / "wp.txt")
        assert len(v) == 4 + 4 and v.wordpiece
        ids = v.encode(["the", "unaffable"])
        assert v.decode(ids) == ["the", "unaffable"]


class TestLoadDataset:
    def test_tsv(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("How old are you?\tWhat is your age?\nhi there\thello there\ttrain\n")
        pairs, report = load_dataset(p)
        assert len(pairs) == 2 and report.skipped == 0
        assert pairs[0].source_tokens == ["how", "old", "are", "you", "?"]
        assert pairs[1].split == "train"

    def test_jsonl_extra_fields_ignored(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text(json.dumps({"source": "a b", "target": "b a", "id": 7, "score": 0.3}) + "\n")
        pairs, _ = load_dataset(p)
        assert pairs == [ParaphrasePair("a b", "b a")]

    def test_malformed_line_skipped_and_reported(self, tmp_path):
        p = tmp_path / "d.tsv"
        lines = [f"s{i}\tt{i}" for i in range(19)] + ["no tab here"]
        p.write_text("\n".join(lines))
        pairs, report = load_dataset(p)
        assert len(pairs) == 19 and report.skipped == 1
        assert "line 20" in report.problems[0]

    def test_too_many_malformed(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("a\tb\nbroken\nalso broken\n")
        with pytest.raises(DatasetError):
            load_dataset(p)

    def test_empty_side_is_malformed(self, tmp_path):
        p = tmp_path / "d.jsonl"
        good = [json.dumps({"source": f"s {i}", "target": "t"}) for i in range(10)]
        p.write_text("\n".join(good + [json.dumps({"source": "  ", "target": "t"})]))
        pairs, report = load_dataset(p)
        assert len(pairs) == 10 and report.skipped == 1

    def test_unreadable(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "missing.tsv")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "d.tsv", format="csv")


def corpus(n):
    return [ParaphrasePair(f"w{i} a b", f"a w{i}") for i in range(n)]


class TestBatching:
    def test_33_pairs_batch_32(self):
        pairs = corpus(33)
        vocab = build_vocab([p.source_tokens for p in pairs])
        sizes = [len(b) for b in make_batches(pairs, vocab, 32, 20)]
        assert sizes == [32, 1]

    def test_truncation(self):
        toks = [f"t{i}" for i in range(25)]
        vocab = Vocabulary(toks)
        src = encode_source(toks, vocab, 20)
        tgt = encode_target(toks, vocab, 20)
        assert len(src) == 20
        assert len(tgt) == 20 and tgt[-1] == EOS and EOS not in tgt[:-1]

    def test_teacher_forcing_layout(self):
        vocab = Vocabulary(["a", "b", "c"])
        batch = make_batch([ParaphrasePair("a", "b c"), ParaphrasePair("a b c", "c")], vocab, 20)
        assert batch.src.tolist() == [[4, 0, 0], [4, 5, 6]]
        assert batch.tgt_in.tolist() == [[BOS, 5, 6], [BOS, 6, 0]]
        assert batch.tgt_out.tolist() == [[5, 6, EOS], [6, EOS, 0]]

    def test_seeded_order_covers_everything(self):
        pairs = corpus(10)
        vocab = build_vocab([p.source_tokens for p in pairs])
        a = np.concatenate([b.index for b in make_batches(pairs, vocab, 3, 20, seed=4)])
        b = np.concatenate([b.index for b in make_batches(pairs, vocab, 3, 20, seed=4)])
        assert sorted(a.tolist()) == list(range(10)) and a.tolist() == b.tolist()

    def test_pad(self):
        assert pad([[1], [2, 3]]).tolist() == [[1, PAD], [2, 3]]

    def test_batch_size_validation(self):
        with pytest.raises(ValueError):
            next(make_batches(corpus(2), Vocabulary(), 0, 20))

    def test_split_pairs(self):
        train, valid, test = split_pairs(corpus(10), 2, 3, seed=1)
        assert (len(train), len(valid), len(test)) == (5, 2, 3)
        assert {p.source for p in train + valid + test} == {p.source for p in corpus(10)}

    def test_empty_pair_rejected(self):
        with pytest.raises(ValueError):
            ParaphrasePair("?", "")
