"""Feature cache construction from unlabeled embeddings.

Pipeline: zero-shot pseudo-labels -> per-class confidence filter (top-K) ->
prototype scores (summed cosine to the class's confident samples) ->
prototype filter (top-N) -> cached key/value pairs (features, one-hot
pseudo-labels) plus precomputed class probabilities for the semantic measure.

Cache arrays are rounded to float32-representable values on construction so
an in-memory cache and one round-tripped through the TFC file behave
identically.

TFC layout (little-endian):

    magic ``TFC1`` | u32 K | u32 N | u32 C | u32 d | f32 scale | u32 P
    | C * u32 per-class prototype counts
    | P*d f32 features | P*C f32 one-hot labels | P*C f32 probabilities
    | one UTF-8 prototype sample id per row, each terminated by ``\\n``
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .errors import ConfigError, FormatError
from .store import EmbeddingMatrix
from .zeroshot import classify, predict, softmax_rows

log = logging.getLogger(__name__)

_MAGIC = b"TFC1"
_META = struct.Struct("<4sIIIIfI")


@dataclass(frozen=True)
class PseudoLabelSet:
    """Per-sample argmax class and confidence from zero-shot prediction."""

    labels: np.ndarray  # (M,) class index per training row
    confidence: np.ndarray  # (M,) max probability per training row
    num_classes: int

    def __post_init__(self):
        self.labels.setflags(write=False)
        self.confidence.setflags(write=False)

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    def rows_for_class(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


@dataclass(frozen=True)
class CacheMeta:
    top_k: int
    protos_per_class: int
    num_classes: int
    dim: int
    logit_scale: float
    per_class_counts: tuple[int, ...]


@dataclass(frozen=True)
class CacheModel:
    """Key-value cache: prototype features (keys) and one-hot pseudo-labels (values)."""

    features: EmbeddingMatrix  # (P, d) unit rows with prototype sample ids
    labels: np.ndarray  # (P, C) one-hot
    probs: np.ndarray  # (P, C) row-stochastic, precomputed with meta.logit_scale
    meta: CacheMeta

    def __post_init__(self):
        p, c = self.labels.shape
        if p != self.features.rows:
            raise FormatError(f"label rows {p} do not match feature rows {self.features.rows}")
        if self.probs.shape != (p, c):
            raise FormatError(f"probs shape {self.probs.shape} does not match labels {(p, c)}")
        if c != self.meta.num_classes:
            raise FormatError(f"label width {c} does not match meta num_classes {self.meta.num_classes}")
        if self.features.dim != self.meta.dim:
            raise FormatError(f"feature dim {self.features.dim} does not match meta dim {self.meta.dim}")
        if sum(self.meta.per_class_counts) != p:
            raise FormatError("per-class counts do not sum to the prototype count")
        if p:
            hot = self.labels.sum(axis=1)
            if not (np.all(hot == 1.0) and np.all((self.labels == 0) | (self.labels == 1))):
                raise FormatError("cache labels must be one-hot rows")
            if not np.all(np.abs(self.probs.sum(axis=1) - 1.0) <= 1e-6):
                raise FormatError("cache probability rows must sum to 1 within 1e-6")
            norms = np.linalg.norm(self.features.data, axis=1)
            if not np.all(np.abs(norms - 1.0) <= 1e-5):
                raise FormatError("cache feature rows must be unit-norm within 1e-5")
        self.labels.setflags(write=False)
        self.probs.setflags(write=False)

    @property
    def size(self) -> int:
        return self.features.rows

    @property
    def dim(self) -> int:
        return self.features.dim


def pseudo_label(train_probs: np.ndarray) -> PseudoLabelSet:
    """Argmax class and max probability per row; ties break to the lowest index."""
    labels, confidence = predict(train_probs)
    return PseudoLabelSet(labels, np.asarray(confidence, dtype=np.float64), train_probs.shape[1])


def confidence_filter(pl: PseudoLabelSet, k: int) -> list[np.ndarray]:
    """Per class, the min(k, available) rows with highest confidence.

    Equal confidences break toward the lower row index. Classes with no
    pseudo-labeled rows yield empty selections.
    """
    if k < 1:
        raise ConfigError(f"top-k must be >= 1, got {k}")
    selected = []
    for c in range(pl.num_classes):
        rows = pl.rows_for_class(c)
        order = sorted(rows.tolist(), key=lambda r: (-pl.confidence[r], r))
        selected.append(np.asarray(order[:k], dtype=np.intp))
    return selected


def prototype_score(class_feats: EmbeddingMatrix, pool: EmbeddingMatrix | None = None) -> np.ndarray:
    """Summed cosine similarity of each row to every pool row (self term included).

    The pool defaults to the class's own confident samples. In that case the
    self term of a unit row is taken as exactly 1 and the Gram matrix is
    symmetrized, so mathematically tied scores (e.g. any two-sample class)
    compare as exact float ties and fall through to the index tie-break.
    Passing a global pool scores against all confident samples instead.
    """
    if pool is None:
        gram = class_feats.data @ class_feats.data.T
        gram = 0.5 * (gram + gram.T)
        np.fill_diagonal(gram, 0.0)
        return 1.0 + gram.sum(axis=1)
    if class_feats.dim != pool.dim:
        raise ConfigError(f"dimension mismatch: {class_feats.dim} vs {pool.dim}")
    return (class_feats.data @ pool.data.T).sum(axis=1)


def prototype_filter(scores: np.ndarray, n: int) -> np.ndarray:
    """Indices of the min(n, len) largest scores, ties to the lower index.

    Returned indices are sorted ascending for deterministic cache assembly.
    """
    if n < 1:
        raise ConfigError(f"prototype count must be >= 1, got {n}")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return np.asarray(sorted(order[:n]), dtype=np.intp)


def _f32_round(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


def select_prototype_rows(
    train: EmbeddingMatrix,
    pl: PseudoLabelSet,
    cfg: RunConfig,
) -> list[np.ndarray]:
    """Per-class training-row indices surviving the configured filter stack."""
    mode = cfg.filter_mode
    if mode == "none":
        return [pl.rows_for_class(c) for c in range(pl.num_classes)]
    if mode == "prototype":
        # single prototype filter keeps top-K per class, scored over the whole class
        per_class = [pl.rows_for_class(c) for c in range(pl.num_classes)]
        budget = cfg.top_k
    else:
        per_class = confidence_filter(pl, cfg.top_k)
        if mode == "confidence":
            return per_class
        budget = cfg.protos_per_class
    pool = None
    if cfg.proto_score_global:
        pooled = np.concatenate([r for r in per_class if r.size]) if per_class else np.empty(0, np.intp)
        pool = train.take(np.sort(pooled)) if pooled.size else None
    selected = []
    for rows in per_class:
        if rows.size == 0:
            selected.append(rows)
            continue
        feats = train.take(rows)
        scores = prototype_score(feats, pool)
        keep = prototype_filter(scores, budget)
        selected.append(rows[keep])
    return selected


def build_cache(train: EmbeddingMatrix, text: EmbeddingMatrix, cfg: RunConfig) -> CacheModel:
    """Run the full cache pipeline on canonicalized training embeddings."""
    cfg.validate()
    if train.dim != text.dim:
        raise ConfigError(f"dimension mismatch: train d={train.dim}, text d={text.dim}")
    num_classes = text.rows
    zs = classify(train, text, cfg.logit_scale)
    pl = pseudo_label(zs.probs)
    per_class = select_prototype_rows(train, pl, cfg)
    for c, rows in enumerate(per_class):
        if rows.size == 0:
            log.warning("class %d has no pseudo-labeled samples; cache holds no prototypes for it", c)
    counts = tuple(int(r.size) for r in per_class)
    all_rows = np.concatenate([r for r in per_class if r.size]) if any(counts) else np.empty(0, np.intp)
    feats = train.take(all_rows)
    feats = EmbeddingMatrix(_f32_round(feats.data), feats.ids)
    labels = np.zeros((feats.rows, num_classes), dtype=np.float64)
    labels[np.arange(feats.rows), pl.labels[all_rows]] = 1.0
    if feats.rows:
        probs = _f32_round(softmax_rows(cfg.logit_scale * (feats.data @ text.data.T)))
    else:
        probs = np.zeros((0, num_classes), dtype=np.float64)
    meta = CacheMeta(cfg.top_k, cfg.protos_per_class, num_classes, train.dim, cfg.logit_scale, counts)
    return CacheModel(feats, labels, probs, meta)


def save_cache(cm: CacheModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(
            _META.pack(
                _MAGIC,
                cm.meta.top_k,
                cm.meta.protos_per_class,
                cm.meta.num_classes,
                cm.meta.dim,
                cm.meta.logit_scale,
                cm.size,
            )
        )
        fh.write(np.asarray(cm.meta.per_class_counts, dtype="<u4").tobytes())
        fh.write(cm.features.data.astype("<f4").tobytes(order="C"))
        fh.write(cm.labels.astype("<f4").tobytes(order="C"))
        fh.write(cm.probs.astype("<f4").tobytes(order="C"))
        fh.write("".join(sid + "\n" for sid in cm.features.ids).encode("utf-8"))


def load_cache(path) -> CacheModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _META.size:
        raise FormatError(f"{path}: truncated cache header at byte offset 0")
    magic, k, n, c, d, scale, p = _META.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad cache magic {magic!r} at byte offset 0 (expected {_MAGIC!r})")
    offset = _META.size

    def block(count, dtype, what):
        nonlocal offset
        nbytes = count * np.dtype(dtype).itemsize
        if len(blob) < offset + nbytes:
            raise FormatError(f"{path}: truncated {what} block at byte offset {offset}")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        offset += nbytes
        return arr

    counts = tuple(int(x) for x in block(c, "<u4", "per-class count"))
    feats = block(p * d, "<f4", "feature").reshape(p, d).astype(np.float64)
    labels = block(p * c, "<f4", "label").reshape(p, c).astype(np.float64)
    probs = block(p * c, "<f4", "probability").reshape(p, c).astype(np.float64)
    try:
        id_block = blob[offset:].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: id block is not UTF-8 at byte offset {offset}") from exc
    if p == 0:
        if id_block:
            raise FormatError(f"{path}: unexpected trailing bytes at byte offset {offset}")
        ids: tuple[str, ...] = ()
    else:
        if not id_block.endswith("\n"):
            raise FormatError(f"{path}: id block missing final newline at byte offset {offset}")
        ids = tuple(id_block[:-1].split("\n"))
        if len(ids) != p:
            raise FormatError(f"{path}: id block holds {len(ids)} ids, header declares {p}")
    meta = CacheMeta(k, n, c, d, scale, counts)
    return CacheModel(EmbeddingMatrix(feats, ids), labels, probs, meta)
