import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cacheadapt import (
    ConfigError,
    DataError,
    EmbeddingMatrix,
    NumericalError,
    RunConfig,
    build_cache,
    cache_classify,
    classify,
    feature_similarity,
    fuse,
    kl_divergence,
    multi_level,
    semantic_similarity,
    similarity_prediction,
    softmax_rows,
)
from cacheadapt.cache import CacheMeta, CacheModel
from conftest import unit_matrix
import oracles


def em(rows, prefix="r"):
    rows = np.asarray(rows, dtype=np.float64)
    return EmbeddingMatrix(rows, tuple(f"{prefix}{i}" for i in range(rows.shape[0])))


def stochastic(rng, rows, cols):
    return softmax_rows(rng.normal(size=(rows, cols)) * 2)


class TestFeatureSimilarity:
    def test_matching_row_scores_one(self):
        proto = em([(0.6, 0.8), (1.0, 0.0)], "p")
        out = feature_similarity(em([(0.6, 0.8)]), proto)
        assert abs(out[0, 0] - 1.0) < 1e-6

    def test_orthogonal_scores_zero(self):
        out = feature_similarity(em([(1.0, 0.0)]), em([(0.0, 1.0)], "p"))
        assert out[0, 0] == 0.0

    def test_matches_loop_oracle(self, rng):
        f = unit_matrix(rng, 3, 5, "f")
        p = unit_matrix(rng, 4, 5, "p")
        out = feature_similarity(f, p)
        for i in range(3):
            for j in range(4):
                assert abs(out[i, j] - oracles.dot(f.data[i], p.data[j])) < 1e-10

    def test_dim_mismatch(self):
        with pytest.raises(ConfigError):
            feature_similarity(em([(1.0, 0.0)]), em([(1.0, 0.0, 0.0)], "p"))


class TestKLDivergence:
    def test_identity_is_zero(self, rng):
        for _ in range(10):
            p = stochastic(rng, 1, 6)[0]
            assert abs(kl_divergence(p, p)) < 1e-9

    def test_closed_form_log2(self):
        assert abs(kl_divergence([1.0, 0.0], [0.5, 0.5]) - math.log(2)) < 1e-12

    def test_matches_summation_oracle(self, rng):
        for _ in range(25):
            p = stochastic(rng, 1, 5)[0]
            q = stochastic(rng, 1, 5)[0]
            assert abs(kl_divergence(p, q) - oracles.kl(p, q)) < 1e-9

    def test_non_stochastic_rejected(self):
        with pytest.raises(NumericalError, match="sum to 1"):
            kl_divergence([0.5, 0.6], [0.5, 0.5])

    @given(seed=st.integers(0, 2**32 - 1))
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(4))
        q = rng.dirichlet(np.ones(4))
        assert kl_divergence(p, q) >= 0.0


class TestSemanticSimilarity:
    def test_identical_prototype_rows_split_evenly(self):
        test = np.array([[0.7, 0.3]])
        proto = np.array([[0.5, 0.5], [0.5, 0.5]])
        out = semantic_similarity(test, proto)
        np.testing.assert_allclose(out, [[0.5, 0.5]])

    def test_matching_prototype_weighs_more(self):
        test = np.array([[0.9, 0.1]])
        proto = np.array([[0.9, 0.1], [0.1, 0.9]])
        out = semantic_similarity(test, proto)
        assert out[0, 0] > out[0, 1]

    def test_matches_straight_line_oracle(self, rng):
        test = stochastic(rng, 4, 5)
        proto = stochastic(rng, 6, 5)
        out = semantic_similarity(test, proto)
        for i in range(4):
            d_row = [oracles.kl(test[i], proto[p]) for p in range(6)]
            expected = [1.0 - s for s in oracles.softmax_row(d_row)]
            np.testing.assert_allclose(out[i], expected, atol=1e-8)

    def test_empty_cache_rejected(self):
        with pytest.raises(DataError, match="empty"):
            semantic_similarity(np.array([[1.0, 0.0]]), np.zeros((0, 2)))

    def test_single_prototype_forced_to_one(self, caplog):
        with caplog.at_level(logging.WARNING):
            out = semantic_similarity(np.array([[0.4, 0.6]]), np.array([[0.5, 0.5]]))
        np.testing.assert_array_equal(out, [[1.0]])
        assert any("single prototype" in r.message for r in caplog.records)

    def test_rows_bounded(self, rng):
        out = semantic_similarity(stochastic(rng, 5, 4), stochastic(rng, 7, 4))
        assert np.all(out >= 0.0) and np.all(out < 1.0)


class TestMultiLevel:
    def test_ones_identity(self, rng):
        w = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(multi_level(w, np.ones((3, 4))), w)

    def test_zero_annihilates(self, rng):
        w = rng.normal(size=(3, 4))
        z = np.ones((3, 4))
        z[1, 2] = 0.0
        assert multi_level(w, z)[1, 2] == 0.0

    def test_elementwise_oracle(self, rng):
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(4, 5))
        out = multi_level(a, b)
        for i in range(4):
            for j in range(5):
                assert out[i, j] == a[i, j] * b[i, j]

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            multi_level(np.ones((2, 3)), np.ones((3, 2)))


class TestSimilarityPrediction:
    def test_single_prototype(self):
        labels = np.zeros((1, 4))
        labels[0, 2] = 1.0
        out = similarity_prediction(np.array([[0.4]]), labels)
        np.testing.assert_allclose(out, [[0.0, 0.0, 0.4, 0.0]])

    def test_same_class_weights_add(self):
        labels = np.array([[1.0, 0.0], [1.0, 0.0]])
        out = similarity_prediction(np.array([[0.3, 0.2]]), labels)
        np.testing.assert_allclose(out, [[0.5, 0.0]])

    def test_matches_matmul_loop(self, rng):
        w = rng.normal(size=(3, 5))
        labels = np.zeros((5, 4))
        labels[np.arange(5), rng.integers(0, 4, 5)] = 1.0
        out = similarity_prediction(w, labels)
        for i in range(3):
            for c in range(4):
                expected = sum(w[i, p] * labels[p, c] for p in range(5))
                assert abs(out[i, c] - expected) < 1e-12

    def test_monotone_in_single_weight(self, rng):
        labels = np.zeros((4, 3))
        labels[np.arange(4), [0, 0, 1, 2]] = 1.0
        w = rng.normal(size=(2, 4))
        base = similarity_prediction(w, labels)
        bumped = w.copy()
        bumped[0, 1] += 0.5  # prototype 1 belongs to class 0
        out = similarity_prediction(bumped, labels)
        assert out[0, 0] > base[0, 0]
        np.testing.assert_array_equal(out[1], base[1])


class TestFuse:
    def test_gamma_zero_disables_cache(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        np.testing.assert_array_equal(fuse(a, b, 0.0), a)

    def test_zero_sim_is_identity(self, rng):
        a = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(fuse(a, np.zeros((3, 4)), 1.0), a)

    def test_elementwise_add_oracle(self, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        out = fuse(a, b, 1.0)
        for i in range(2):
            for j in range(3):
                assert out[i, j] == a[i, j] + b[i, j]

    def test_negative_gamma_rejected(self):
        with pytest.raises(ConfigError):
            fuse(np.ones((1, 2)), np.ones((1, 2)), -0.5)


def small_cache(rng, num_protos=5, num_classes=3, dim=6, scale=50.0):
    train = unit_matrix(rng, 25, dim, "x")
    text = unit_matrix(rng, num_classes, dim, "t")
    cfg = RunConfig(top_k=4, protos_per_class=2, logit_scale=scale).validate()
    return build_cache(train, text, cfg), train, text, cfg


class TestCacheClassify:
    def test_separable_fixture_recovers_class(self):
        text = em(np.eye(3), "t")
        train = em(np.eye(3), "x")
        cfg = RunConfig(top_k=1, protos_per_class=1).validate()
        cache = build_cache(train, text, cfg)
        test = em([(0.0, 1.0, 0.0)], "q")
        pred = cache_classify(test, cache, text, cfg)
        assert pred.labels[0] == 1

    def test_empty_cache_is_an_error(self):
        empty = CacheModel(
            EmbeddingMatrix(np.empty((0, 4)), ()),
            np.zeros((0, 2)),
            np.zeros((0, 2)),
            CacheMeta(1, 1, 2, 4, 100.0, (0, 0)),
        )
        test = em([(1.0, 0.0, 0.0, 0.0)], "q")
        text = em(np.eye(4)[:2], "t")
        with pytest.raises(DataError, match="empty"):
            cache_classify(test, empty, text, RunConfig().validate())

    def test_gamma_zero_equals_zeroshot_labels(self, rng):
        cache, train, text, cfg = small_cache(rng)
        test = unit_matrix(rng, 12, 6, "q")
        fused = cache_classify(test, cache, text, cfg.replace(gamma=0.0))
        zs = classify(test, text, cfg.logit_scale)
        np.testing.assert_array_equal(fused.labels, zs.labels)

    def test_prototype_permutation_leaves_logits_unchanged(self, rng):
        cache, train, text, cfg = small_cache(rng)
        test = unit_matrix(rng, 7, 6, "q")
        base = cache_classify(test, cache, text, cfg)
        perm = rng.permutation(cache.size)
        counts = np.bincount(np.argmax(cache.labels[perm], axis=1),
                             minlength=cache.meta.num_classes)
        shuffled = CacheModel(
            EmbeddingMatrix(cache.features.data[perm],
                            tuple(cache.features.ids[i] for i in perm)),
            cache.labels[perm],
            cache.probs[perm],
            CacheMeta(cache.meta.top_k, cache.meta.protos_per_class,
                      cache.meta.num_classes, cache.meta.dim,
                      cache.meta.logit_scale, tuple(int(c) for c in counts)),
        )
        again = cache_classify(test, shuffled, text, cfg)
        np.testing.assert_allclose(again.raw, base.raw, atol=1e-12)

    def test_matches_naive_reimplementation(self, rng):
        cache, train, text, cfg = small_cache(rng, scale=30.0)
        test = unit_matrix(rng, 5, 6, "q")
        pred = cache_classify(test, cache, text, cfg)
        expected = oracles.cache_logits_naive(
            [list(r) for r in test.data],
            [list(r) for r in text.data],
            [list(r) for r in cache.features.data],
            [list(r) for r in cache.labels],
            [list(r) for r in cache.probs],
            cfg.logit_scale,
            cfg.gamma,
        )
        np.testing.assert_allclose(pred.raw, expected, atol=1e-6)

    def test_accuracy_not_below_zeroshot_on_planted_clusters(self):
        from cacheadapt import SyntheticSpec, evaluate, generate_synthetic

        train, test, text, man = generate_synthetic(SyntheticSpec())
        cfg = RunConfig().validate()
        zs = evaluate(classify(test, text, cfg.logit_scale), man, "zs").accuracy
        cached = evaluate(cache_classify(test, build_cache(train, text, cfg), text, cfg),
                          man, "cache").accuracy
        assert cached >= zs
