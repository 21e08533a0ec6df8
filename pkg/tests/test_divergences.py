"""The four divergences against independent oracles, plus matrix machinery."""

import math
import struct
import zlib

import numpy as np
import pytest
from scipy.optimize import linprog

from loramix import corpus, divergences as dv
from loramix.divergences import SENTINEL, MetricKind
from loramix.errors import (
    CacheFormatError,
    CacheVersionError,
    DegenerateBandwidthError,
    DuplicateIdError,
    VocabMismatchError,
)

from conftest import make_dataset


def dist_from_ids(ids, vocab, epsilon=0.0, dataset_id="d"):
    ds = corpus.TokenizedDataset.from_sequences(dataset_id, vocab, [ids])
    return corpus.to_empirical_distribution(ds, epsilon)


def lp_transport_cost(p: np.ndarray, q: np.ndarray) -> float:
    """Exact optimal transport on the integer line via linear programming."""
    n = p.size
    cost = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).reshape(-1).astype(float)
    a_eq = []
    for i in range(n):  # row marginals
        row = np.zeros((n, n))
        row[i, :] = 1.0
        a_eq.append(row.reshape(-1))
    for j in range(n):  # column marginals
        col = np.zeros((n, n))
        col[:, j] = 1.0
        a_eq.append(col.reshape(-1))
    result = linprog(cost, A_eq=np.stack(a_eq), b_eq=np.concatenate([p, q]),
                     bounds=(0, None), method="highs")
    assert result.success
    return float(result.fun)


def random_count_dataset(rng, vocab, max_tokens=40, dataset_id="d"):
    n = int(rng.integers(1, max_tokens))
    ids = rng.integers(0, vocab, size=n)
    return dist_from_ids(ids, vocab, dataset_id=dataset_id)


class TestWasserstein:
    def test_identical_is_zero(self):
        p = dist_from_ids([0, 3, 3, 7], 8)
        assert dv.wasserstein1(p, p) == 0.0

    def test_point_masses(self):
        p = dist_from_ids([3], 10)
        q = dist_from_ids([7], 10)
        assert dv.wasserstein1(p, q) == 4.0

    def test_half_mass_shift(self):
        p = dist_from_ids([0, 1], 2)
        q = dist_from_ids([1], 2)
        assert dv.wasserstein1(p, q) == 0.5

    def test_matches_lp_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            vocab = int(rng.integers(2, 11))
            p = random_count_dataset(rng, vocab)
            q = random_count_dataset(rng, vocab)
            assert dv.wasserstein1(p, q) == pytest.approx(
                lp_transport_cost(p.probs, q.probs), abs=1e-9)

    def test_matches_cdf_formula_on_probs(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            vocab = int(rng.integers(2, 40))
            p = random_count_dataset(rng, vocab, max_tokens=200)
            q = random_count_dataset(rng, vocab, max_tokens=200)
            cdf = float(np.abs(np.cumsum(p.probs - q.probs)[:-1]).sum())
            assert dv.wasserstein1(p, q) == pytest.approx(cdf, abs=1e-12)

    def test_symmetric_and_triangle(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            vocab = 16
            a = random_count_dataset(rng, vocab)
            b = random_count_dataset(rng, vocab)
            c = random_count_dataset(rng, vocab)
            assert dv.wasserstein1(a, b) == pytest.approx(dv.wasserstein1(b, a), abs=0)
            assert dv.wasserstein1(a, c) <= dv.wasserstein1(a, b) + dv.wasserstein1(b, c) + 1e-9

    def test_vocab_mismatch(self):
        with pytest.raises(VocabMismatchError):
            dv.wasserstein1(dist_from_ids([0], 2), dist_from_ids([0], 3))


class TestKl:
    def test_self_divergence_zero(self):
        p = dist_from_ids([0, 1, 1, 2], 4)
        assert dv.kl(p, p) == 0.0

    def test_hand_value(self):
        p = dist_from_ids([0, 1], 2)
        q = dist_from_ids([0, 1, 1, 1], 2)
        expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        assert dv.kl(p, q) == pytest.approx(expected, abs=1e-12)

    def test_disjoint_smoothed_large_finite(self):
        p = dist_from_ids([0, 1], 4, epsilon=1e-10)
        q = dist_from_ids([2, 3], 4, epsilon=1e-10)
        value = dv.kl(p, q)
        assert math.isfinite(value) and value > 10

    def test_zero_support_rejected(self):
        p = dist_from_ids([0, 1], 4)
        q = dist_from_ids([2, 3], 4)
        with pytest.raises(ValueError, match="zero mass"):
            dv.kl(p, q)

    def test_nonnegative_under_smoothing(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            vocab = int(rng.integers(2, 30))
            p = random_count_dataset(rng, vocab)
            q = random_count_dataset(rng, vocab)
            p = corpus.to_empirical_distribution(
                corpus.TokenizedDataset.from_sequences("p", vocab, [p.token_sample]), 1e-10)
            q = corpus.to_empirical_distribution(
                corpus.TokenizedDataset.from_sequences("q", vocab, [q.token_sample]), 1e-10)
            assert dv.kl(p, q) >= 0.0


class TestJs:
    def test_identical_zero(self):
        p = dist_from_ids([0, 0, 1], 2)
        assert dv.js(p, p) == 0.0

    def test_disjoint_supports_ln2(self):
        p = dist_from_ids([0, 1], 4)
        q = dist_from_ids([2, 3], 4)
        assert dv.js(p, q) == pytest.approx(math.log(2), abs=1e-12)

    def test_symmetry_bitexact_and_range(self):
        rng = np.random.default_rng(41)
        for _ in range(200):
            vocab = int(rng.integers(2, 30))
            p = random_count_dataset(rng, vocab)
            q = random_count_dataset(rng, vocab)
            forward = dv.js(p, q)
            assert forward == dv.js(q, p)
            assert 0.0 <= forward <= math.log(2) + 1e-12


class TestMmd:
    def test_identical_samples_zero(self):
        xs = np.array([0, 1, 1, 5])
        assert dv.mmd2_gaussian(xs, xs, sigma=1.0) == 0.0

    def test_hand_value(self):
        expected = 2.0 - 2.0 * math.exp(-0.5)
        assert dv.mmd2_gaussian(np.array([0]), np.array([1]), 1.0) == pytest.approx(expected, abs=1e-12)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(51)
        for _ in range(50):
            xs = rng.integers(0, 12, size=rng.integers(1, 21))
            ys = rng.integers(0, 12, size=rng.integers(1, 21))
            sigma = float(rng.uniform(0.5, 4.0))
            gamma = 1.0 / (2 * sigma * sigma)
            k = lambda a, b: math.exp(-gamma * (a - b) ** 2)
            kxx = sum(k(a, b) for a in xs for b in xs) / (len(xs) ** 2)
            kyy = sum(k(a, b) for a in ys for b in ys) / (len(ys) ** 2)
            kxy = sum(k(a, b) for a in xs for b in ys) / (len(xs) * len(ys))
            expected = max(kxx - 2 * kxy + kyy, 0.0)
            assert dv.mmd2_gaussian(xs, ys, sigma) == pytest.approx(expected, abs=1e-9)

    def test_errors(self):
        with pytest.raises(ValueError):
            dv.mmd2_gaussian(np.array([]), np.array([1]), 1.0)
        with pytest.raises(ValueError):
            dv.mmd2_gaussian(np.array([1]), np.array([1]), 0.0)


class TestMedianBandwidth:
    def test_single_pair(self):
        assert dv.median_bandwidth(np.array([0]), np.array([2])) == 2.0

    def test_three_points(self):
        assert dv.median_bandwidth(np.array([0, 1]), np.array([2])) == 1.0

    def test_scale_property(self):
        xs = np.array([0, 1, 3, 7])
        ys = np.array([2, 5])
        base = dv.median_bandwidth(xs, ys)
        assert dv.median_bandwidth(xs * 3, ys * 3) == pytest.approx(3 * base, rel=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateBandwidthError):
            dv.median_bandwidth(np.array([4, 4]), np.array([4]))


class TestAlignmentVector:
    def test_zero_divergence_to_identical_content(self):
        query = make_dataset("query", vocab=32, n_tokens=200, seed=1)
        twin = corpus.TokenizedDataset.from_sequences("bank0", 32,
                                                      [ex.ids for ex in query.examples])
        bank = [twin, make_dataset("bank1", 32, 200, seed=2)]
        align = dv.alignment_vector(query, bank, MetricKind("js"))
        assert align.values[0] == 0.0
        assert align.values[1] > 0.0

    def test_self_id_masked(self):
        bank = [make_dataset(f"d{k}", 32, 100, seed=k) for k in range(4)]
        align = dv.alignment_vector(bank[2], bank, MetricKind("js"))
        assert align.masked == {2}
        assert align.values[2] == SENTINEL

    def test_matches_scalar_calls(self):
        query = make_dataset("q", 32, 150, seed=9)
        bank = [make_dataset(f"d{k}", 32, 150, seed=20 + k) for k in range(5)]
        for metric in (MetricKind("wd"), MetricKind("kl"), MetricKind("js"),
                       MetricKind("mmd", sigma=2.0)):
            align = dv.alignment_vector(query, bank, metric, seed=7)
            for k, ds in enumerate(bank):
                expected = dv.evaluate_metric(
                    metric,
                    dv.prepare_distribution(query, metric, 7),
                    dv.prepare_distribution(ds, metric, 7),
                )
                assert align.values[k] == expected

    def test_duplicate_ids_rejected(self):
        a = make_dataset("same", 16, 50, seed=1)
        b = make_dataset("same", 16, 50, seed=2)
        with pytest.raises(DuplicateIdError):
            dv.alignment_vector(make_dataset("q", 16, 50, seed=3), [a, b], MetricKind("js"))

    def test_vocab_mismatch(self):
        with pytest.raises(VocabMismatchError):
            dv.alignment_vector(make_dataset("q", 16, 50, seed=3),
                                [make_dataset("b", 32, 50, seed=4)], MetricKind("js"))


class TestPairwiseMatrix:
    def test_symmetric_counts_and_mirroring(self):
        bank = [make_dataset(f"d{k}", 32, 120, seed=k) for k in range(3)]
        m = dv.pairwise_distance_matrix(bank, MetricKind("js"))
        assert m.pair_evaluations == 3
        assert m.self_masked
        assert np.array_equal(m.values, m.values.T)

    def test_worker_count_irrelevant(self):
        bank = [make_dataset(f"d{k}", 32, 120, seed=k) for k in range(6)]
        for metric in (MetricKind("js"), MetricKind("mmd"), MetricKind("kl")):
            one = dv.pairwise_distance_matrix(bank, metric, workers=1, seed=5)
            eight = dv.pairwise_distance_matrix(bank, metric, workers=8, seed=5)
            assert np.array_equal(one.values, eight.values)
            assert one.pair_evaluations == eight.pair_evaluations

    def test_kl_matches_scalar_calls(self):
        bank = [make_dataset(f"d{k}", 32, 100, seed=30 + k) for k in range(5)]
        metric = MetricKind("kl")
        m = dv.pairwise_distance_matrix(bank, metric)
        assert m.pair_evaluations == 20
        dists = [dv.prepare_distribution(ds, metric) for ds in bank]
        for i in range(5):
            for j in range(5):
                if i == j:
                    assert m.values[i, j] == SENTINEL
                else:
                    assert m.values[i, j] == dv.kl(dists[i], dists[j])

    def test_counter_bounds(self):
        bank = [make_dataset(f"d{k}", 16, 60, seed=40 + k) for k in range(7)]
        n = len(bank)
        for metric, bound in ((MetricKind("wd"), n * (n - 1) // 2),
                                (MetricKind("js"), n * (n - 1) // 2),
                                (MetricKind("kl"), n * (n - 1))):
            m = dv.pairwise_distance_matrix(bank, metric, workers=3)
            assert m.pair_evaluations <= bound

    def test_mmd_deterministic_in_seed(self):
        bank = [make_dataset(f"d{k}", 16, 5000, seed=50 + k) for k in range(3)]
        a = dv.pairwise_distance_matrix(bank, MetricKind("mmd"), seed=1)
        b = dv.pairwise_distance_matrix(bank, MetricKind("mmd"), seed=1)
        c = dv.pairwise_distance_matrix(bank, MetricKind("mmd"), seed=2)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_duplicate_ids_rejected(self):
        bank = [make_dataset("same", 16, 50, seed=1), make_dataset("same", 16, 50, seed=2)]
        with pytest.raises(DuplicateIdError):
            dv.pairwise_distance_matrix(bank, MetricKind("js"))


class TestMatrixCacheFile:
    def _random_matrix(self, seed, n=10, metric=None):
        rng = np.random.default_rng(seed)
        vals = rng.uniform(0, 5, (n, n))
        vals = 0.5 * (vals + vals.T)
        np.fill_diagonal(vals, SENTINEL)
        return dv.DistanceMatrix(metric or MetricKind("js"), tuple(f"id{k}" for k in range(n)),
                                 vals, self_masked=True, pair_evaluations=n * (n - 1) // 2)

    def test_round_trip_bit_exact(self, tmp_path):
        m = self._random_matrix(1)
        path = tmp_path / "m.lmfd"
        dv.save_matrix(m, path)
        loaded = dv.load_matrix(path)
        assert loaded.ids == m.ids
        assert np.array_equal(loaded.values, m.values)
        assert loaded.pair_evaluations == m.pair_evaluations
        assert loaded.self_masked == m.self_masked
        assert loaded.metric == m.metric

    def test_metric_params_preserved(self, tmp_path):
        m = self._random_matrix(2, metric=MetricKind("mmd", sigma=3.5, epsilon=0.0))
        path = tmp_path / "m.lmfd"
        dv.save_matrix(m, path)
        assert dv.load_matrix(path).metric == MetricKind("mmd", sigma=3.5, epsilon=0.0)
        m2 = self._random_matrix(3, metric=MetricKind("mmd", sigma="median"))
        dv.save_matrix(m2, path)
        assert dv.load_matrix(path).metric.sigma == "median"

    def test_truncated_file_checksum_error(self, tmp_path):
        m = self._random_matrix(4)
        path = tmp_path / "m.lmfd"
        dv.save_matrix(m, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(CacheFormatError, match="checksum|truncated"):
            dv.load_matrix(path)

    def test_corrupted_byte_checksum_error(self, tmp_path):
        m = self._random_matrix(5)
        path = tmp_path / "m.lmfd"
        dv.save_matrix(m, path)
        blob = bytearray(path.read_bytes())
        blob[40] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CacheFormatError, match="checksum"):
            dv.load_matrix(path)

    def test_version_mismatch(self, tmp_path):
        m = self._random_matrix(6)
        path = tmp_path / "m.lmfd"
        dv.save_matrix(m, path)
        blob = bytearray(path.read_bytes())
        payload = bytearray(blob[4:-4])
        struct.pack_into("<H", payload, 0, 99)   # future format version
        crc = struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)
        path.write_bytes(bytes(blob[:4]) + bytes(payload) + crc)
        with pytest.raises(CacheVersionError, match="99"):
            dv.load_matrix(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.lmfd"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(CacheFormatError, match="magic"):
            dv.load_matrix(path)
