"""Zero-shot classification from cosine similarity between image and class text features.

Pure functions over immutable inputs; safe for concurrent batch-parallel use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .store import EmbeddingMatrix


@dataclass(frozen=True)
class PredictionBatch:
    """Raw logits and row-stochastic probabilities with argmax labels/confidences.

    ``ids`` carries the sample ids of the classified rows so downstream
    evaluation can align predictions with a manifest.
    """

    raw: np.ndarray  # (B, C) pre-softmax scores
    probs: np.ndarray  # (B, C) row-stochastic
    labels: np.ndarray  # (B,) argmax class per row
    confidence: np.ndarray  # (B,) max probability per row
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.raw.shape != self.probs.shape:
            raise ConfigError(
                f"raw shape {self.raw.shape} does not match probs shape {self.probs.shape}"
            )
        sums = self.probs.sum(axis=1)
        if self.probs.size and not np.all(np.abs(sums - 1.0) <= 1e-6):
            raise NumericalError("probability rows do not sum to 1 within 1e-6")
        if not np.array_equal(self.labels, np.argmax(self.probs, axis=1)):
            raise NumericalError("labels are not the row-wise argmax of probs")
        for arr in (self.raw, self.probs, self.labels, self.confidence):
            arr.setflags(write=False)

    @property
    def batch_size(self) -> int:
        return self.raw.shape[0]

    @property
    def num_classes(self) -> int:
        return self.raw.shape[1]


def similarity_logits(feats: EmbeddingMatrix, text: EmbeddingMatrix, scale: float) -> np.ndarray:
    """Scaled cosine similarities, entry (i, c) = scale * <feats[i], text[c]>.

    Both inputs must be canonicalized (unit rows), so the dot product is the
    cosine.
    """
    if scale <= 0:
        raise ConfigError(f"logit scale must be positive, got {scale}")
    if feats.dim != text.dim:
        raise ConfigError(f"dimension mismatch: features d={feats.dim}, text d={text.dim}")
    return scale * (feats.data @ text.data.T)


def softmax_rows(raw: np.ndarray) -> np.ndarray:
    """Numerically stable row softmax (subtracts the row max before exp)."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise NumericalError("softmax input contains non-finite entries")
    shifted = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row argmax label and max value; ties break to the lowest index."""
    probs = np.asarray(probs)
    labels = np.argmax(probs, axis=1)
    confidence = probs[np.arange(probs.shape[0]), labels]
    return labels, confidence


def classify(feats: EmbeddingMatrix, text: EmbeddingMatrix, scale: float) -> PredictionBatch:
    """Zero-shot prediction: softmax over scaled cosine similarity logits."""
    raw = similarity_logits(feats, text, scale)
    probs = softmax_rows(raw)
    labels, confidence = predict(probs)
    return PredictionBatch(raw, probs, labels, confidence, feats.ids)
