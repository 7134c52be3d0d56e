import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mafin.augmodel import (
    AugmentingModel,
    CheckpointError,
    FeatureHasher,
    GradientBuffer,
    NonFiniteEncoding,
    encode,
    encode_backward,
    featurize,
)
from oracles import central_difference, relative_error

text_st = st.text(alphabet="abcdefgh xyz.,", min_size=1, max_size=60)


class TestHasher:
    def test_deterministic(self):
        h = FeatureHasher(1 << 10, seed=5)
        a, b = featurize(h, "the quick fox"), featurize(h, "the quick fox")
        assert np.array_equal(a.indices, b.indices) and np.array_equal(a.values, b.values)

    def test_single_char_is_word_unigram_only(self):
        h = FeatureHasher(1 << 12)
        assert h.tokens("a") == ["wa"]
        f = featurize(h, "a")
        assert f.nnz == 1 and abs(abs(f.values[0]) - 1.0) < 1e-15

    def test_one_word_changes_vector(self):
        h = FeatureHasher(1 << 12)
        a, b = featurize(h, "red apple pie"), featurize(h, "red apple tart")
        assert not np.array_equal(a.dense(h.feature_dim), b.dense(h.feature_dim))

    def test_empty_text(self):
        with pytest.raises(ValueError):
            featurize(FeatureHasher(1 << 4), "")

    def test_feature_dim_power_of_two(self):
        with pytest.raises(ValueError):
            FeatureHasher(1000)

    def test_tokens(self):
        toks = FeatureHasher(1 << 4).tokens("AbCd e")
        assert "cabc" in toks and "cbcd " in toks and "cabcd " in toks and "cabcd e" not in toks
        assert "wabcd" in toks and "we" in toks
        assert len(toks) == 4 + 3 + 2 + 2

    @given(text_st)
    def test_scaling(self, text):
        f = featurize(FeatureHasher(1 << 8, seed=1), text)
        assert np.all(np.diff(f.indices) > 0)
        if f.nnz:
            # signed counts scaled by 1/sqrt(nnz): the smallest magnitude is 1/sqrt(nnz)
            scaled = f.values * np.sqrt(f.nnz)
            np.testing.assert_allclose(scaled, np.round(scaled), atol=1e-12)

    def test_featurize_many_matches_single(self):
        h = FeatureHasher(1 << 8, seed=2)
        X = h.featurize_many(["one two", "three"])
        np.testing.assert_array_equal(X.toarray()[1], featurize(h, "three").dense(256))


class TestEncode:
    def test_zero_weights_normalized_fallback(self, caplog):
        m = AugmentingModel(np.zeros((4, 16)), FeatureHasher(16), "normalized")
        v = encode(m, "hello")
        np.testing.assert_array_equal(v.values, [1, 0, 0, 0])
        assert "basis" in caplog.text

    def test_zero_weights_unnormalized(self):
        m = AugmentingModel(np.zeros((4, 16)), FeatureHasher(16), "unnormalized")
        v = encode(m, "hello")
        assert v.norm == 0.0

    def test_deterministic_and_unit(self):
        m = AugmentingModel.init(8, 1 << 10, seed=3)
        a, b = encode(m, "some words here"), encode(m, "some words here")
        assert np.array_equal(a.values, b.values)
        assert abs(a.norm - 1) < 1e-9

    def test_init_bounds(self):
        m = AugmentingModel.init(4, 1 << 10, seed=1)
        assert np.abs(m.weights).max() <= 1 / np.sqrt(1 << 10)
        assert np.array_equal(m.weights, AugmentingModel.init(4, 1 << 10, seed=1).weights)

    def test_non_finite(self):
        w = np.full((2, 16), np.inf)
        m = AugmentingModel(w, FeatureHasher(16), "unnormalized")
        with pytest.raises(NonFiniteEncoding):
            encode(m, "abc")

    def test_batched_matches_single(self):
        m = AugmentingModel.init(6, 1 << 9, seed=2)
        texts = ["alpha beta", "gamma", "delta epsilon zeta"]
        E = m.encode_many(texts)
        for t, row in zip(texts, E):
            np.testing.assert_allclose(row, encode(m, t).values, atol=1e-15)

    @settings(max_examples=30)
    @given(text_st, st.integers(0, 1000))
    def test_unit_norm_property(self, text, seed):
        m = AugmentingModel.init(5, 1 << 8, seed=seed)
        assert abs(encode(m, text).norm - 1.0) < 1e-9


class TestBackward:
    def test_zero_upstream(self):
        m = AugmentingModel.init(3, 64, seed=0)
        buf = encode_backward(m, "hello", np.zeros(3))
        assert np.all(buf.to_dense(64) == 0)

    def test_linear_chain_rule(self):
        # d_aug=1, one active feature with count c: dL/dW = upstream * c
        h = FeatureHasher(16)
        f = featurize(h, "a")
        m = AugmentingModel(np.ones((1, 16)), h, "unnormalized")
        buf = encode_backward(m, "a", np.array([2.5]))
        G = buf.to_dense(16)
        assert G[0, f.indices[0]] == 2.5 * f.values[0]
        assert np.count_nonzero(G) == 1

    def test_zero_raw_gives_zero_gradient(self):
        m = AugmentingModel(np.zeros((3, 16)), FeatureHasher(16), "normalized")
        assert np.all(encode_backward(m, "abc", np.ones(3)).to_dense(16) == 0)

    @pytest.mark.parametrize("mode", ["normalized", "unnormalized"])
    def test_finite_differences(self, mode):
        rng = np.random.default_rng(11)
        h = FeatureHasher(8, seed=4)
        m = AugmentingModel(rng.normal(size=(3, 8)), h, mode)
        text = "ab cd"
        assert 0 < featurize(h, text).nnz <= 8
        u = rng.normal(size=3)

        def loss():
            return float(encode(m, text).values @ u)

        G = encode_backward(m, text, u).to_dense(8)
        cols = featurize(h, text).indices
        for r in range(3):
            for c in cols:
                fd = central_difference(loss, m.weights, (r, c), 1e-5)
                assert relative_error(G[r, c], fd) < 1e-6


class TestGradientBuffer:
    def test_consolidate_sums_duplicates(self):
        buf = GradientBuffer(2)
        buf.add(np.array([5, 1]), np.array([[1.0, 2.0], [3.0, 4.0]]))
        buf.add(np.array([1]), np.array([[10.0], [20.0]]))
        cols, block = buf.consolidate()
        assert cols.tolist() == [1, 5]
        np.testing.assert_array_equal(block, [[12.0, 1.0], [24.0, 3.0]])
        buf.clear()
        assert not buf

    def test_shape_check(self):
        with pytest.raises(ValueError):
            GradientBuffer(2).add(np.array([0]), np.zeros((3, 1)))


class TestCheckpoint:
    def test_round_trip(self):
        m = AugmentingModel.init(4, 1 << 6, "unnormalized", seed=9, hasher_seed=17)
        back = AugmentingModel.from_bytes(m.to_bytes())
        assert np.array_equal(back.weights, m.weights)
        assert back.mode == "unnormalized" and back.hasher == m.hasher

    def test_layout(self):
        m = AugmentingModel.init(2, 8, seed=1, hasher_seed=-3)
        blob = m.to_bytes()
        assert blob[:4] == b"MAFW"
        assert struct.unpack("<IIIBq", blob[4:25]) == (1, 8, 2, 0, -3)
        np.testing.assert_array_equal(np.frombuffer(blob[25:-4], "<f8").reshape(2, 8), m.weights)
        assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4])

    def test_corruption_detected(self):
        blob = bytearray(AugmentingModel.init(2, 8, seed=1).to_bytes())
        blob[30] ^= 0xFF
        with pytest.raises(CheckpointError, match="CRC"):
            AugmentingModel.from_bytes(bytes(blob))

    def test_truncated_and_foreign(self):
        blob = AugmentingModel.init(2, 8, seed=1).to_bytes()
        with pytest.raises(CheckpointError):
            AugmentingModel.from_bytes(blob[:20])
        with pytest.raises(CheckpointError):
            AugmentingModel.from_bytes(b"XXXX" + blob[4:])
