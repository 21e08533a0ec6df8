"""Dataset ingestion, the byte fallback tokenizer, and distribution reduction."""

import json

import numpy as np
import pytest

from loramix import corpus
from loramix.errors import DatasetFormatError, VocabMismatchError

from conftest import make_dataset


class TestLoadTokenDataset:
    def test_order_preserved(self, tmp_path):
        path = tmp_path / "toy.jsonl"
        path.write_text('{"ids":[1,2]}\n{"ids":[3]}\n')
        ds = corpus.load_token_dataset(path, expected_vocab=8)
        assert ds.dataset_id == "toy"
        assert ds.vocab_size == 8
        assert [list(ex.ids) for ex in ds.examples] == [[1, 2], [3]]

    def test_out_of_range_id_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"ids":[10]}\n')
        with pytest.raises(DatasetFormatError, match=r":1:.*10"):
            corpus.load_token_dataset(path, expected_vocab=10)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(DatasetFormatError, match="no examples"):
            corpus.load_token_dataset(path, expected_vocab=4)

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text('{"ids":[1]}\nnot json\n')
        with pytest.raises(DatasetFormatError, match=":2:"):
            corpus.load_token_dataset(path, expected_vocab=4)

    def test_meta_line_supplies_id_and_vocab(self, tmp_path):
        path = tmp_path / "anything.jsonl"
        path.write_text('{"meta":{"dataset_id":"renamed","vocab_size":32}}\n{"ids":[31]}\n')
        ds = corpus.load_token_dataset(path)
        assert ds.dataset_id == "renamed"
        assert ds.vocab_size == 32

    def test_meta_vocab_conflict(self, tmp_path):
        path = tmp_path / "x.jsonl"
        path.write_text('{"meta":{"vocab_size":32}}\n{"ids":[1]}\n')
        with pytest.raises(VocabMismatchError):
            corpus.load_token_dataset(path, expected_vocab=16)

    def test_missing_vocab_rejected(self, tmp_path):
        path = tmp_path / "x.jsonl"
        path.write_text('{"ids":[1]}\n')
        with pytest.raises(DatasetFormatError, match="expected_vocab"):
            corpus.load_token_dataset(path)

    def test_round_trip_random_datasets(self, tmp_path):
        rng = np.random.default_rng(7)
        for case in range(100):
            vocab = int(rng.integers(2, 64))
            n_examples = int(rng.integers(1, 6))
            seqs = [rng.integers(0, vocab, size=rng.integers(1, 12)).tolist()
                    for _ in range(n_examples)]
            ds = corpus.TokenizedDataset.from_sequences(f"case{case}", vocab, seqs)
            path = tmp_path / f"case{case}.jsonl"
            corpus.write_token_dataset(ds, path)
            assert corpus.load_token_dataset(path) == ds


class TestByteFallback:
    def test_ascii(self):
        assert list(corpus.byte_fallback_tokenize("AB").ids) == [65, 66]

    def test_multibyte(self):
        assert list(corpus.byte_fallback_tokenize("é").ids) == [195, 169]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            corpus.byte_fallback_tokenize("")

    def test_round_trip(self):
        rng = np.random.default_rng(11)
        alphabet = "abcXYZ 012éü中\U0001f600"
        for _ in range(200):
            text = "".join(rng.choice(list(alphabet), size=rng.integers(1, 20)))
            ids = corpus.byte_fallback_tokenize(text).ids
            assert corpus.byte_fallback_decode(ids) == text
            assert ids.max() < corpus.BYTE_FALLBACK_VOCAB


class TestEmpiricalDistribution:
    def test_frequency_count(self):
        ds = corpus.TokenizedDataset.from_sequences("a", 2, [[0, 0, 1]])
        dist = corpus.to_empirical_distribution(ds, 0.0)
        np.testing.assert_allclose(dist.probs, [2 / 3, 1 / 3])
        assert list(dist.token_sample) == [0, 0, 1]

    def test_smoothing_hand_value(self):
        # (1 + 1) / (1 + 2) and (0 + 1) / (1 + 2)
        ds = corpus.TokenizedDataset.from_sequences("a", 2, [[0]])
        dist = corpus.to_empirical_distribution(ds, 1.0)
        np.testing.assert_allclose(dist.probs, [2 / 3, 1 / 3])

    def test_simplex_and_support(self):
        rng = np.random.default_rng(3)
        for seed in range(30):
            ds = make_dataset(f"d{seed}", vocab=32, n_tokens=int(rng.integers(5, 200)), seed=seed)
            dist = corpus.to_empirical_distribution(ds, 0.0)
            assert abs(dist.probs.sum() - 1.0) <= 1e-9
            counts = np.bincount(ds.flat_ids(), minlength=32)
            assert np.array_equal(dist.probs == 0, counts == 0)

    def test_permutation_invariance(self):
        ds = make_dataset("d", vocab=16, n_tokens=100, seed=5)
        seqs = [list(ex.ids) for ex in
                corpus.TokenizedDataset.from_sequences("d", 16, np.array_split(ds.flat_ids(), 10)).examples]
        shuffled = corpus.TokenizedDataset.from_sequences("d", 16, list(reversed(seqs)))
        original = corpus.TokenizedDataset.from_sequences("d", 16, seqs)
        a = corpus.to_empirical_distribution(original, 0.0)
        b = corpus.to_empirical_distribution(shuffled, 0.0)
        assert np.array_equal(a.probs, b.probs)

    def test_smoothed_strictly_positive(self):
        ds = corpus.TokenizedDataset.from_sequences("a", 50, [[0]])
        dist = corpus.to_empirical_distribution(ds, 1e-10)
        assert dist.probs.min() > 0


class TestSubsampleTokens:
    def test_small_dataset_returned_whole(self):
        ds = corpus.TokenizedDataset.from_sequences("a", 8, [[1, 2, 3, 4, 5]])
        assert list(corpus.subsample_tokens(ds, 10, seed=0)) == [1, 2, 3, 4, 5]

    def test_deterministic_in_seed(self):
        ds = make_dataset("d", vocab=32, n_tokens=5000, seed=1)
        a = corpus.subsample_tokens(ds, 100, seed=42)
        b = corpus.subsample_tokens(ds, 100, seed=42)
        c = corpus.subsample_tokens(ds, 100, seed=43)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_zero_m_rejected(self):
        ds = corpus.TokenizedDataset.from_sequences("a", 4, [[1]])
        with pytest.raises(ValueError):
            corpus.subsample_tokens(ds, 0, seed=0)

    def test_sample_frequencies_match_source(self):
        # statistical oracle: per-token counts within 3 sigma of the binomial
        # bound (sampling without replacement has smaller variance)
        vocab = 8
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(vocab) * 5)
        ids = rng.choice(vocab, size=100_000, p=probs)
        ds = corpus.TokenizedDataset.from_sequences("big", vocab, [ids])
        source_freq = np.bincount(ids, minlength=vocab) / ids.size
        m = 2048
        for seed in range(5):
            sample = corpus.subsample_tokens(ds, m, seed=seed)
            counts = np.bincount(sample, minlength=vocab)
            expected = m * source_freq
            sigma = np.sqrt(m * source_freq * (1 - source_freq))
            assert np.all(np.abs(counts - expected) <= 3 * sigma + 1e-9), f"seed {seed}"
