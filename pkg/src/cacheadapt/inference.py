"""Training-free inference against the feature cache.

Combines a feature-level measure (cosine between test and prototype
embeddings) with a semantic-level measure (softmax-normalized KL divergence
between class-probability rows), fuses them by Hadamard product, converts
the fused weights into per-class similarity logits through the one-hot cache
labels, and adds the result onto the zero-shot probabilities.

All functions are pure; batch rows are independent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cache import CacheModel
from .config import RunConfig
from .errors import ConfigError, DataError, NumericalError
from .store import EmbeddingMatrix
from .zeroshot import PredictionBatch, predict, similarity_logits, softmax_rows

log = logging.getLogger(__name__)

KL_EPS = 1e-12
ROW_SUM_TOL = 1e-4


@dataclass(frozen=True)
class SimilarityWeights:
    """Feature-level, semantic-level, and fused test-vs-prototype weights."""

    feature: np.ndarray  # (B, P) raw cosines in [-1, 1]
    semantic: np.ndarray  # (B, P) 1 - softmax(KL row)
    fused: np.ndarray  # (B, P) elementwise product

    def __post_init__(self):
        for arr in (self.feature, self.semantic, self.fused):
            arr.setflags(write=False)


def feature_similarity(f_test: EmbeddingMatrix, proto: EmbeddingMatrix) -> np.ndarray:
    """Cosine of every test row against every prototype row (unit rows assumed)."""
    if f_test.dim != proto.dim:
        raise ConfigError(f"dimension mismatch: test d={f_test.dim}, prototypes d={proto.dim}")
    return f_test.data @ proto.data.T


def _check_stochastic(rows: np.ndarray, what: str) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    sums = rows.sum(axis=-1)
    if not np.all(np.abs(sums - 1.0) <= ROW_SUM_TOL):
        raise NumericalError(f"{what} rows must sum to 1 within {ROW_SUM_TOL}")
    return rows


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(P, Q) = sum_i P_i log(P_i / Q_i), log arguments clamped at 1e-12.

    Multipliers stay unclamped, so zero entries of P contribute exactly 0 and
    KL(p, p) is exactly 0.
    """
    p = _check_stochastic(np.atleast_1d(np.asarray(p, dtype=np.float64)), "probability")
    q = _check_stochastic(np.atleast_1d(np.asarray(q, dtype=np.float64)), "probability")
    if p.shape != q.shape:
        raise ConfigError(f"shape mismatch: {p.shape} vs {q.shape}")
    logs = np.log(np.maximum(p, KL_EPS)) - np.log(np.maximum(q, KL_EPS))
    return float(np.sum(p * logs))


def semantic_similarity(logits_test: np.ndarray, logits_proto: np.ndarray) -> np.ndarray:
    """Per-row semantic weights: 1 - softmax over prototypes of the KL row.

    ``logits_test`` (B, C) and ``logits_proto`` (P, C) are probability rows.
    The softmax runs over the whole prototype bank. A single-entry cache
    would make the literal formula vanish, so P == 1 yields weight 1 with a
    warning.
    """
    pt = _check_stochastic(logits_test, "test probability")
    qp = _check_stochastic(logits_proto, "prototype probability")
    if pt.shape[1] != qp.shape[1]:
        raise ConfigError(f"class-count mismatch: {pt.shape[1]} vs {qp.shape[1]}")
    num_protos = qp.shape[0]
    if num_protos == 0:
        raise DataError("cache is empty: no prototypes to compare against")
    if num_protos == 1:
        log.warning("cache holds a single prototype; semantic weight fixed at 1")
        return np.ones((pt.shape[0], 1), dtype=np.float64)
    # D[i, p] = sum_c pt[i, c] * (log pt[i, c] - log qp[p, c]), clamped inside the logs
    log_pt = np.log(np.maximum(pt, KL_EPS))
    log_qp = np.log(np.maximum(qp, KL_EPS))
    divergence = (pt * log_pt).sum(axis=1, keepdims=True) - pt @ log_qp.T
    return 1.0 - softmax_rows(divergence)


def multi_level(w_feature: np.ndarray, w_semantic: np.ndarray) -> np.ndarray:
    """Hadamard product of the two weight matrices."""
    if w_feature.shape != w_semantic.shape:
        raise ConfigError(f"shape mismatch: {w_feature.shape} vs {w_semantic.shape}")
    return w_feature * w_semantic


def similarity_weights(
    f_test: EmbeddingMatrix,
    cache: CacheModel,
    logits_test: np.ndarray,
    measure: str = "multilevel",
) -> SimilarityWeights:
    """All three weight levels for a test batch against the cache."""
    w_feat = feature_similarity(f_test, cache.features)
    w_sem = semantic_similarity(logits_test, cache.probs)
    if measure == "feature":
        fused = w_feat
    elif measure == "semantic":
        fused = w_sem
    elif measure == "multilevel":
        fused = multi_level(w_feat, w_sem)
    else:
        raise ConfigError(f"unknown measure {measure!r}")
    return SimilarityWeights(w_feat, w_sem, fused)


def similarity_prediction(w_fused: np.ndarray, proto_labels: np.ndarray) -> np.ndarray:
    """Cache-weighted class scores: entry (i, c) sums fused weights of class-c prototypes."""
    if w_fused.shape[1] != proto_labels.shape[0]:
        raise ConfigError(
            f"shape mismatch: weights {w_fused.shape} vs labels {proto_labels.shape}"
        )
    return w_fused @ proto_labels


def fuse(logits_test: np.ndarray, logits_sim: np.ndarray, gamma: float = 1.0) -> np.ndarray:
    """Residual fusion: zero-shot probabilities plus gamma times the cache term."""
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    if logits_test.shape != logits_sim.shape:
        raise ConfigError(f"shape mismatch: {logits_test.shape} vs {logits_sim.shape}")
    return logits_test + gamma * logits_sim


def check_scale_consistency(cache: CacheModel, cfg: RunConfig) -> None:
    """Warn when the run scale differs from the scale baked into the cache.

    Cached class probabilities were computed at build time; comparing them
    against test probabilities at a different temperature skews the
    semantic measure.
    """
    if abs(cache.meta.logit_scale - cfg.logit_scale) > 1e-6 * cfg.logit_scale:
        log.warning(
            "logit scale %.6g differs from the cache's build-time scale %.6g; "
            "semantic weights compare mismatched temperatures",
            cfg.logit_scale, cache.meta.logit_scale,
        )


def cache_classify(
    f_test: EmbeddingMatrix,
    cache: CacheModel,
    text: EmbeddingMatrix,
    cfg: RunConfig,
) -> PredictionBatch:
    """Training-free prediction: zero-shot probabilities fused with cache similarity."""
    if cache.size == 0:
        raise DataError("cache is empty: rebuild it or run the zero-shot path explicitly")
    check_scale_consistency(cache, cfg)
    if f_test.dim != cache.dim or text.dim != cache.dim:
        raise ConfigError(
            f"dimension mismatch: test d={f_test.dim}, cache d={cache.dim}, text d={text.dim}"
        )
    logits_test = softmax_rows(similarity_logits(f_test, text, cfg.logit_scale))
    weights = similarity_weights(f_test, cache, logits_test, cfg.measure)
    logits_sim = similarity_prediction(weights.fused, cache.labels)
    logits_all = fuse(logits_test, logits_sim, cfg.gamma)
    probs = softmax_rows(logits_all)
    labels, confidence = predict(probs)
    return PredictionBatch(logits_all, probs, labels, confidence, f_test.ids)
