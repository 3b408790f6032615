import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import brute_nearest, naive_supervector
from ubsc.core import (
    UbscModel,
    encode_frame,
    nearest_centers,
    read_ubsc_model,
    sparse_codes,
    supervector,
    train_ubsc,
    write_ubsc_model,
)
from ubsc.errors import DataError, EmptyUtterance, PoolTooSmall, TruncatedFile, WrongModelKind
from ubsc.gmm import DiagonalGmm, write_gmm_model


class TestTrain:
    def test_exhaustive_sample_is_permutation(self, rng):
        X = rng.normal(size=(12, 4))
        model = train_ubsc(X, k=12, V=3, seed=0)
        for v in range(3):
            got = sorted(map(tuple, model.centers[v].tolist()))
            want = sorted(map(tuple, X.astype(np.float32).tolist()))
            assert got == want

    def test_single_center_is_pool_member(self, rng):
        X = rng.normal(size=(30, 4))
        model = train_ubsc(X, k=1, V=1, seed=5)
        assert model.centers.shape == (1, 1, 4)
        assert any(np.array_equal(model.centers[0, 0], r) for r in X.astype(np.float32))

    def test_no_duplicates_within_model(self, rng):
        X = rng.normal(size=(50, 3))
        model = train_ubsc(X, k=20, V=8, seed=2)
        for picks in model.source_indices:
            assert len(set(picks.tolist())) == 20

    def test_pool_too_small(self, rng):
        with pytest.raises(PoolTooSmall, match="pool smaller than k"):
            train_ubsc(rng.normal(size=(5, 3)), k=6, V=1, seed=0)

    def test_deterministic(self, rng):
        X = rng.normal(size=(100, 5))
        assert train_ubsc(X, 10, 4, seed=9) == train_ubsc(X, 10, 4, seed=9)
        assert train_ubsc(X, 10, 4, seed=9) != train_ubsc(X, 10, 4, seed=10)

    def test_list_of_utterances_is_pooled(self, rng):
        utts = [rng.normal(size=(7, 3)) for _ in range(4)]
        a = train_ubsc(utts, 5, 2, seed=1)
        b = train_ubsc(np.concatenate(utts), 5, 2, seed=1)
        assert a == b

    def test_pair_frequencies_uniform(self):
        X = np.arange(10, dtype=float)[:, None]
        pairs = list(itertools.combinations(range(10), 2))
        counts = dict.fromkeys(pairs, 0)
        trials = 10_000
        for seed in range(trials):
            idx = train_ubsc(X, k=2, V=1, seed=seed).source_indices[0]
            counts[tuple(sorted(idx.tolist()))] += 1
        observed = np.array([counts[p] for p in pairs])
        p = 1 / len(pairs)
        se = np.sqrt(trials * p * (1 - p))
        assert np.all(np.abs(observed - trials * p) <= 3 * se)
        assert stats.chisquare(observed).pvalue > 1e-3


class TestEncodeFrame:
    def test_zero_distance_winner(self, rng):
        W = rng.normal(size=(6, 4)) + 10
        W[3] = np.array([0.5, -0.5, 1.0, 2.0])
        code = encode_frame(W[3], W)
        np.testing.assert_array_equal(code, np.eye(6)[3])

    def test_single_center(self, rng):
        W = rng.normal(size=(1, 4))
        for x in rng.normal(size=(5, 4)):
            np.testing.assert_array_equal(encode_frame(x, W), [1.0])

    def test_ties_go_to_lowest_index(self):
        W = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(encode_frame([0.0, 0.0], W), [1, 0, 0])
        W2 = np.array([[5.0, 5.0], [1.0, 1.0], [1.0, 1.0]])
        np.testing.assert_array_equal(encode_frame([1.0, 1.0], W2), [0, 1, 0])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(77)
        for _ in range(200):
            W = rng.normal(size=(32, 20))
            x = rng.normal(size=20)
            assert int(np.argmax(encode_frame(x, W))) == brute_nearest(x.tolist(), W.tolist())

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            encode_frame([np.nan, 0.0], np.zeros((2, 2)))

    def test_near_tie_resolved_on_exact_distance(self):
        # expanded distances of these two centres collapse to the same value
        x = np.array([1e8, 0.0])
        W = np.array([[1e8 + 1e-7, 0.0], [1e8, 2e-7]])
        assert nearest_centers(x[None], W)[0] == brute_nearest(x.tolist(), W.tolist())

    @given(st.integers(0, 2**31), st.integers(2, 16))
    @settings(max_examples=40, deadline=None)
    def test_permutation_equivariance(self, seed, k):
        rng = np.random.default_rng(seed)
        W = rng.normal(size=(k, 3))
        x = rng.normal(size=3)
        perm = rng.permutation(k)
        np.testing.assert_array_equal(encode_frame(x, W[perm]), encode_frame(x, W)[perm])


def model_from(centers, seed=0):
    return UbscModel(np.asarray(centers, dtype=np.float32), seed=seed)


class TestSupervector:
    def test_single_frame(self, rng):
        model = train_ubsc(rng.normal(size=(40, 5)), 8, 3, seed=0)
        z = supervector(rng.normal(size=(1, 5)), model).to_dense()
        assert np.count_nonzero(z) == 3
        assert set(z[z != 0].tolist()) == {1.0}

    def test_identical_frames_like_single(self, rng):
        model = train_ubsc(rng.normal(size=(40, 5)), 8, 3, seed=0)
        x = rng.normal(size=(1, 5))
        a = supervector(x, model).to_dense()
        b = supervector(np.repeat(x, 17, axis=0), model).to_dense()
        np.testing.assert_array_equal(a, b)

    def test_matches_naive(self, rng):
        model = train_ubsc(rng.normal(size=(200, 20)), 8, 3, seed=4)
        X = rng.normal(size=(50, 20))
        z = supervector(X, model).to_dense()
        assert z.tobytes() == naive_supervector(X, model.centers).tobytes()

    def test_empty_utterance(self, rng):
        model = train_ubsc(rng.normal(size=(20, 3)), 4, 1, seed=0)
        with pytest.raises(EmptyUtterance):
            supervector(np.zeros((0, 3)), model)

    def test_storage_switches_to_sparse(self, rng):
        X = rng.normal(size=(5000, 3))
        small = supervector(X[:10], train_ubsc(X, 1024, 4, seed=0))
        big = supervector(X[:10], train_ubsc(X, 1025, 4, seed=0))
        assert not small.is_sparse
        assert big.is_sparse and big.length == 4100

    def test_thread_count_does_not_matter(self, rng):
        model = train_ubsc(rng.normal(size=(3000, 6)), 1500, 6, seed=1)
        X = rng.normal(size=(120, 6))
        ref = supervector(X, model, threads=1)
        for t in (2, 4):
            other = supervector(X, model, threads=t)
            assert other.values.tobytes() == ref.values.tobytes()
            assert other.indices.tobytes() == ref.indices.tobytes()

    @given(st.integers(0, 2**31), st.integers(1, 40), st.integers(1, 12), st.integers(1, 4))
    @settings(max_examples=60, deadline=None)
    def test_block_invariants_and_order_invariance(self, seed, n, k, V):
        rng = np.random.default_rng(seed)
        model = train_ubsc(rng.normal(size=(max(k, 20), 4)), k, V, seed=seed)
        X = rng.normal(size=(n, 4))
        z = supervector(X, model).to_dense()
        assert np.all((z >= 0) & (z <= 1))
        blocks = z.reshape(V, k)
        np.testing.assert_allclose(blocks.sum(axis=1), 1.0, atol=1e-9, rtol=0)
        assert abs(z.sum() - V) <= 1e-6
        assert np.all(np.count_nonzero(blocks, axis=1) <= min(n, k))
        codes = sparse_codes(X, model)
        assert codes.shape == (n, V)
        shuffled = supervector(X[rng.permutation(n)], model).to_dense()
        assert shuffled.tobytes() == z.tobytes()


class TestModelFile:
    def test_round_trip(self, tmp_path, rng):
        model = train_ubsc(rng.normal(size=(100, 20)), 16, 5, seed=2**40 + 3)
        write_ubsc_model(tmp_path / "m.ubsm", model)
        back = read_ubsc_model(tmp_path / "m.ubsm")
        assert back == model
        assert back.centers.tobytes() == model.centers.tobytes()
        assert (back.V, back.k, back.dim, back.seed) == (5, 16, 20, 2**40 + 3)

    def test_truncated(self, tmp_path, rng):
        write_ubsc_model(tmp_path / "m.ubsm", train_ubsc(rng.normal(size=(30, 4)), 8, 2, seed=0))
        raw = (tmp_path / "m.ubsm").read_bytes()
        (tmp_path / "m.ubsm").write_bytes(raw[:-1])
        with pytest.raises(TruncatedFile, match="truncated model"):
            read_ubsc_model(tmp_path / "m.ubsm")
        (tmp_path / "m.ubsm").write_bytes(raw[:10])
        with pytest.raises(TruncatedFile, match="truncated model"):
            read_ubsc_model(tmp_path / "m.ubsm")

    def test_wrong_kind(self, tmp_path):
        gmm = DiagonalGmm(np.ones(1), np.zeros((1, 2)), np.ones((1, 2)), np.full(2, 1e-4))
        write_gmm_model(tmp_path / "m.gmm", gmm)
        with pytest.raises(WrongModelKind, match="wrong model kind"):
            read_ubsc_model(tmp_path / "m.gmm")
