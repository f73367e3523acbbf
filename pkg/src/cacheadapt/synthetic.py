"""Synthetic planted-cluster fixtures standing in for encoder features at desk scale.

Each class is a random unit center; samples are the center plus Gaussian
noise, re-normalized. Text features are noisy copies of the centers, so the
zero-shot classifier is imperfect and cache/adapter components have headroom
to improve. Fully deterministic in the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .store import DatasetManifest, EmbeddingMatrix, ManifestEntry, l2_normalize


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 8
    dim: int = 64
    train_per_class: int = 200
    test_per_class: int = 100
    sigma: float = 0.6  # cluster spread; 0 collapses every sample onto its center
    text_noise: float = 0.2  # offset of text features from the true centers
    seed: int = 7

    def validate(self) -> "SyntheticSpec":
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.dim < 2:
            raise ConfigError(f"dim must be >= 2, got {self.dim}")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigError("per-class sample counts must be >= 1")
        if self.sigma < 0 or self.text_noise < 0:
            raise ConfigError("sigma and text_noise must be >= 0")
        return self


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[EmbeddingMatrix, EmbeddingMatrix, EmbeddingMatrix, DatasetManifest]:
    """Build (train, test, text, manifest); all rows unit-norm, ids unique."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(size=(spec.num_classes, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)

    def cluster(count: int, prefix: str) -> tuple[np.ndarray, list[str], list[int]]:
        rows, ids, truth = [], [], []
        for c in range(spec.num_classes):
            noise = rng.normal(size=(count, spec.dim))
            rows.append(centers[c] + spec.sigma * noise)
            ids.extend(f"{prefix}-{c:03d}-{i:04d}" for i in range(count))
            truth.extend([c] * count)
        return np.concatenate(rows), ids, truth

    train_rows, train_ids, train_truth = cluster(spec.train_per_class, "train")
    test_rows, test_ids, test_truth = cluster(spec.test_per_class, "test")
    text_rows = centers + spec.text_noise * rng.normal(size=(spec.num_classes, spec.dim))

    train = l2_normalize(EmbeddingMatrix(train_rows, tuple(train_ids)))
    test = l2_normalize(EmbeddingMatrix(test_rows, tuple(test_ids)))
    text = l2_normalize(
        EmbeddingMatrix(text_rows, tuple(f"class-{c:03d}" for c in range(spec.num_classes)))
    )
    entries = [
        ManifestEntry(sid, "train", cls) for sid, cls in zip(train_ids, train_truth)
    ] + [ManifestEntry(sid, "test", cls) for sid, cls in zip(test_ids, test_truth)]
    class_names = tuple(f"class-{c:03d}" for c in range(spec.num_classes))
    return train, test, text, DatasetManifest(tuple(entries), class_names)
