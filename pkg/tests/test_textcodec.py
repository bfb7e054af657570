"""BPE training, roundtrips, and the positional padding layout."""

import string

import numpy as np
import pytest

from shapecompiler import textcodec as tc
from shapecompiler.errors import CapacityError, ContractError, FileFormatError


class TestTrain:
    def test_first_merge_on_classic_corpus(self):
        vocab = tc.train_bpe(["low", "low", "lower"], 1)
        # "lo" appears 3 times, tied with "ow"; lexicographic tie-break
        assert vocab.merges == [(b"l", b"o")]

    def test_zero_merges_is_byte_level(self):
        vocab = tc.train_bpe(["anything"], 0)
        assert vocab.size == 256
        assert vocab.merges == []

    def test_deterministic(self):
        corpus = ["a chair with four legs", "a round table", "a tall chair"]
        a = tc.train_bpe(corpus, 30)
        b = tc.train_bpe(corpus, 30)
        assert a.merges == b.merges

    def test_stops_early_when_pairs_exhausted(self, caplog):
        with caplog.at_level("INFO"):
            vocab = tc.train_bpe(["ab"], 50)
        assert vocab.size < 256 + 50
        assert any("ran out of pairs" in r.message for r in caplog.records)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ContractError):
            tc.train_bpe([], 5)


class TestRoundtrip:
    def test_lowercase_rule(self):
        vocab = tc.train_bpe(["chair", "chairs", "armchair"], 20)
        assert tc.encode("Chair", vocab) == tc.encode("chair", vocab)

    def test_decode_inverts_encode(self):
        vocab = tc.train_bpe(["a chair with armrests", "a square table"], 40)
        text = "a chair with armrests"
        assert tc.decode(tc.encode(text, vocab), vocab) == text

    def test_roundtrip_random_ascii(self):
        corpus = ["a chair with four legs and a tall back",
                  "a round table with a wide top"]
        vocab = tc.train_bpe(corpus, 64)
        rng = np.random.default_rng(0)
        alphabet = string.ascii_lowercase + string.digits + " .,"
        for _ in range(100):
            n = int(rng.integers(1, 60))
            text = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), n))
            assert tc.decode(tc.encode(text, vocab), vocab) == text

    def test_unknown_bytes_fall_back_to_byte_tokens(self):
        vocab = tc.train_bpe(["plain ascii"], 10)
        text = "emdash—and ünïcode"
        assert tc.decode(tc.encode(text, vocab), vocab) == text.lower()

    def test_decode_rejects_out_of_vocab_id(self):
        vocab = tc.train_bpe(["abc"], 2)
        with pytest.raises(ContractError):
            tc.decode([vocab.size], vocab)


class TestPadding:
    def test_positional_pads(self):
        code = tc.pad_code([5, 6, 7], vocab_size=100, slots=16)
        assert code[:3].tolist() == [5, 6, 7]
        assert code[3:].tolist() == [100 + j for j in range(3, 16)]

    def test_empty_text_all_pads(self):
        code = tc.pad_code([], vocab_size=10, slots=8)
        assert code.tolist() == [10 + j for j in range(8)]

    def test_full_width_no_padding(self):
        code = tc.pad_code(list(range(8)), vocab_size=10, slots=8)
        assert code.tolist() == list(range(8))

    def test_overflow_is_loud(self):
        with pytest.raises(CapacityError):
            tc.pad_code(list(range(9)), vocab_size=10, slots=8)

    def test_pads_disjoint_from_content_and_strippable(self):
        vocab = tc.train_bpe(["a table"], 8)
        ids = tc.encode("a table", vocab)
        code = tc.pad_code(ids, vocab.size, slots=32)
        assert (code[len(ids):] >= vocab.size).all()
        assert tc.strip_pads(code, vocab.size) == ids


class TestVocabFile:
    def test_roundtrip(self, tmp_path):
        vocab = tc.train_bpe(["a chair", "a table", "a stool"], 25)
        path = tmp_path / "vocab.json"
        tc.save_vocab(path, vocab)
        loaded = tc.load_vocab(path)
        assert loaded.merges == vocab.merges
        assert loaded.size == vocab.size
        assert tc.encode("a chair", loaded) == tc.encode("a chair", vocab)

    def test_bad_file_rejected(self, tmp_path):
        path = tmp_path / "vocab.json"
        path.write_text('{"merges": []}')
        with pytest.raises(FileFormatError):
            tc.load_vocab(path)
