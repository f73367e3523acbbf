"""Residual two-layer MLP adapters on image and text features, trained with
masked pseudo-label cross-entropy plus a marginal-distribution entropy loss.

The adapted feature of a row f is ``ratio * MLP(f) + (1 - ratio) * f``
re-normalized to unit length, with ``MLP(f) = relu(f W1 + b1) W2 + b2``.
Gradients are computed analytically (including through the
re-normalization); ``ratio == 0`` short-circuits to an exact identity.
Residual ratios are fixed hyperparameters, never trained.

TFA checkpoint layout (little-endian):

    magic ``TFA1`` | u32 d | u32 h | f32 alpha | f32 beta | u64 seed | u32 epoch
    | f32 blocks: image W1 (d*h), b1 (h), W2 (h*d), b2 (d), then the same
      four blocks for the text adapter
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .cache import CacheModel
from .config import RunConfig
from .errors import ConfigError, FormatError, NumericalError
from .inference import (
    cache_classify,
    check_scale_consistency,
    fuse,
    similarity_prediction,
    similarity_weights,
)
from .store import ZERO_NORM_EPS, EmbeddingMatrix
from .zeroshot import PredictionBatch, predict, similarity_logits, softmax_rows

_MAGIC = b"TFA1"
_META = struct.Struct("<4sIIffQI")

MARGINAL_EPS = 1e-12


@dataclass
class MLPParams:
    w1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, d)
    b2: np.ndarray  # (d,)

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    def copy(self) -> "MLPParams":
        return MLPParams(*(a.copy() for a in self.arrays()))


@dataclass
class AdapterParams:
    """Weights of both adapters plus their fixed residual ratios."""

    image: MLPParams
    text: MLPParams
    alpha: float
    beta: float

    @property
    def dim(self) -> int:
        return self.image.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.image.w1.shape[1]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return self.image.arrays() + self.text.arrays()

    def copy(self) -> "AdapterParams":
        return AdapterParams(self.image.copy(), self.text.copy(), self.alpha, self.beta)


@dataclass
class AdapterGrads:
    image: MLPParams
    text: MLPParams

    def arrays(self) -> tuple[np.ndarray, ...]:
        return self.image.arrays() + self.text.arrays()


@dataclass
class EpochStats:
    epoch: int
    ce_loss: float
    md_loss: float
    mask_fraction: float
    pseudo_accuracy: float
    learning_rate: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    final_pseudo_accuracy: dict[str, float] = field(default_factory=dict)


def _zero_mlp(dim: int, hidden: int) -> MLPParams:
    return MLPParams(
        np.zeros((dim, hidden)), np.zeros(hidden), np.zeros((hidden, dim)), np.zeros(dim)
    )


def init_adapter_params(dim: int, hidden_ratio: int, alpha: float, beta: float, rng) -> AdapterParams:
    """Small-uniform first layer; zeroed second layer so adapted == original at start."""
    hidden = max(1, dim // hidden_ratio)
    bound = 1.0 / math.sqrt(dim)

    def one() -> MLPParams:
        mlp = _zero_mlp(dim, hidden)
        mlp.w1 = rng.uniform(-bound, bound, size=(dim, hidden))
        return mlp

    return AdapterParams(one(), one(), alpha, beta)


def _forward_residual(x: np.ndarray, mlp: MLPParams, ratio: float):
    """Adapted rows plus the cache needed for the backward pass."""
    if ratio == 0.0:
        return x, None
    a1 = x @ mlp.w1 + mlp.b1  # (R, h)
    z1 = np.maximum(a1, 0.0)
    mlp_out = z1 @ mlp.w2 + mlp.b2  # (R, d)
    u = ratio * mlp_out + (1.0 - ratio) * x
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    if np.any(norms <= ZERO_NORM_EPS):
        raise NumericalError("adapted feature row collapsed to the zero vector")
    out = u / norms
    return out, (a1, z1, norms, out)


def _backward_residual(g_out: np.ndarray, x: np.ndarray, mlp: MLPParams, ratio: float, cache) -> MLPParams:
    """Gradients of the loss w.r.t. one adapter's weights, given d loss / d output."""
    dim, hidden = mlp.w1.shape
    if ratio == 0.0:
        return _zero_mlp(dim, hidden)
    a1, z1, norms, out = cache
    # renormalization: out = u / |u|, so g_u = (g - (g . out) out) / |u|
    g_u = (g_out - (g_out * out).sum(axis=1, keepdims=True) * out) / norms
    g_mlp = ratio * g_u
    g_w2 = z1.T @ g_mlp
    g_b2 = g_mlp.sum(axis=0)
    g_z1 = g_mlp @ mlp.w2.T
    g_a1 = g_z1 * (a1 > 0)
    g_w1 = x.T @ g_a1
    g_b1 = g_a1.sum(axis=0)
    return MLPParams(g_w1, g_b1, g_w2, g_b2)


def adapter_forward(feats: EmbeddingMatrix, mlp: MLPParams, ratio: float) -> EmbeddingMatrix:
    """Residual-adapt canonicalized features; ratio 0 returns the input unchanged."""
    if not (0.0 <= ratio <= 1.0):
        raise ConfigError(f"residual ratio must lie in [0, 1], got {ratio}")
    if feats.dim != mlp.w1.shape[0]:
        raise ConfigError(f"dimension mismatch: features d={feats.dim}, adapter d={mlp.w1.shape[0]}")
    if ratio == 0.0:
        return feats
    out, _ = _forward_residual(feats.data, mlp, ratio)
    return EmbeddingMatrix(out, feats.ids)


def ce_masked_loss(probs: np.ndarray, pseudo: np.ndarray, theta: float) -> tuple[float, np.ndarray]:
    """Mean -log p[pseudo] over rows whose max probability reaches theta.

    Rows failing the mask contribute nothing; an all-failing batch yields
    loss 0.
    """
    if not (0.0 < theta <= 1.0):
        raise ConfigError(f"theta must lie in (0, 1], got {theta}")
    probs = np.asarray(probs, dtype=np.float64)
    pseudo = np.asarray(pseudo)
    if np.any((pseudo < 0) | (pseudo >= probs.shape[1])):
        raise ConfigError("pseudo labels out of class range")
    mask = probs.max(axis=1) >= theta
    if not mask.any():
        return 0.0, mask
    picked = probs[mask, pseudo[mask]]
    return float(np.mean(-np.log(picked))), mask


def marginal_entropy_loss(probs: np.ndarray) -> float:
    """log C minus the entropy of the batch-mean class distribution.

    Zero when the marginal is uniform, log C when it collapses onto one
    class; the log argument is clamped at 1e-12.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ConfigError(f"expected a nonempty (B, C) matrix, got shape {probs.shape}")
    h = probs.mean(axis=0)
    num_classes = probs.shape[1]
    return float(math.log(num_classes) + np.sum(h * np.log(np.maximum(h, MARGINAL_EPS))))


@dataclass
class BatchLosses:
    total: float
    ce: float
    md: float
    mask: np.ndarray
    probs: np.ndarray


def loss_and_grads(
    batch: np.ndarray,
    text: np.ndarray,
    pseudo: np.ndarray,
    params: AdapterParams,
    scale: float,
    theta: float,
    lambda_md: float,
) -> tuple[BatchLosses, AdapterGrads]:
    """Forward pass and exact analytic gradients of L_ce + lambda_md * L_md.

    The confidence mask is treated as locally constant (its indicator has
    zero derivative almost everywhere).
    """
    f_img, cache_img = _forward_residual(batch, params.image, params.alpha)
    f_txt, cache_txt = _forward_residual(text, params.text, params.beta)
    raw = scale * (f_img @ f_txt.T)  # (B, C)
    probs = softmax_rows(raw)
    batch_rows, num_classes = probs.shape

    ce, mask = ce_masked_loss(probs, pseudo, theta)
    md = marginal_entropy_loss(probs)
    total = ce + lambda_md * md

    g_probs = np.zeros_like(probs)
    n_pass = int(mask.sum())
    if n_pass:
        rows = np.flatnonzero(mask)
        g_probs[rows, pseudo[rows]] -= 1.0 / (n_pass * probs[rows, pseudo[rows]])
    if lambda_md != 0.0:
        h = probs.mean(axis=0)
        # d/dh of h*log(max(h, eps)): log h + 1 above the clamp, log eps below
        g_h = np.log(np.maximum(h, MARGINAL_EPS)) + (h > MARGINAL_EPS)
        g_probs += (lambda_md / batch_rows) * g_h[None, :]

    # softmax backward: g_raw = probs * (g_probs - <g_probs, probs>_row)
    inner = (g_probs * probs).sum(axis=1, keepdims=True)
    g_raw = probs * (g_probs - inner)
    g_f_img = scale * (g_raw @ f_txt)
    g_f_txt = scale * (g_raw.T @ f_img)

    grads = AdapterGrads(
        _backward_residual(g_f_img, batch, params.image, params.alpha, cache_img),
        _backward_residual(g_f_txt, text, params.text, params.beta, cache_txt),
    )
    return BatchLosses(total, ce, md, mask, probs), grads


class _Optimizer:
    """Deterministic in-place updates; one slot per parameter array."""

    def __init__(self, cfg: RunConfig, arrays: tuple[np.ndarray, ...]):
        self.kind = cfg.optimizer
        self.momentum = cfg.momentum
        self.velocity = [np.zeros_like(a) for a in arrays]
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8

    def step(self, arrays: tuple[np.ndarray, ...], grads: tuple[np.ndarray, ...], lr: float):
        if self.kind == "sgd":
            for slot, (w, g) in enumerate(zip(arrays, grads)):
                self.velocity[slot] = self.momentum * self.velocity[slot] + g
                w -= lr * self.velocity[slot]
        else:  # adam
            self.t += 1
            correct1 = 1.0 - self.beta1**self.t
            correct2 = 1.0 - self.beta2**self.t
            for slot, (w, g) in enumerate(zip(arrays, grads)):
                self.m[slot] = self.beta1 * self.m[slot] + (1 - self.beta1) * g
                self.v[slot] = self.beta2 * self.v[slot] + (1 - self.beta2) * g * g
                w -= lr * (self.m[slot] / correct1) / (np.sqrt(self.v[slot] / correct2) + self.eps)


def _epoch_lr(cfg: RunConfig, epoch: int) -> float:
    if cfg.lr_schedule == "cosine":
        return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.learning_rate


def train(
    train_feats: EmbeddingMatrix,
    text_feats: EmbeddingMatrix,
    cache: CacheModel,
    cfg: RunConfig,
) -> tuple[AdapterParams, TrainReport]:
    """Mini-batch optimization of both adapters against frozen pseudo-labels.

    Pseudo-labels come from one training-free cache pass over the frozen
    pre-trained features and never refresh; the confidence mask is evaluated
    on the current adapter predictions each step. Deterministic given
    cfg.seed.
    """
    cfg.validate()
    if cfg.lambda_md > 0 and cfg.batch_size < 2:
        raise ConfigError("batch_size must be >= 2 when lambda_md > 0")
    pseudo = cache_classify(train_feats, cache, text_feats, cfg).labels

    rng = np.random.default_rng(cfg.seed)
    params = init_adapter_params(train_feats.dim, cfg.hidden_ratio, cfg.alpha, cfg.beta, rng)
    optimizer = _Optimizer(cfg, params.arrays())
    rows = train_feats.rows
    report = TrainReport()

    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg, epoch)
        perm = rng.permutation(rows)
        ce_sum = md_sum = 0.0
        pass_total = correct_total = 0
        for start in range(0, rows, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = train_feats.data[idx]
            targets = pseudo[idx]
            losses, grads = loss_and_grads(
                batch, text_feats.data, targets, params, cfg.logit_scale, cfg.theta, cfg.lambda_md
            )
            n_pass = int(losses.mask.sum())
            ce_sum += losses.ce * n_pass
            md_sum += losses.md * idx.size
            pass_total += n_pass
            correct_total += int((np.argmax(losses.probs, axis=1) == targets).sum())
            if lr > 0:
                optimizer.step(params.arrays(), grads.arrays(), lr)
        report.epochs.append(
            EpochStats(
                epoch=epoch,
                ce_loss=ce_sum / pass_total if pass_total else 0.0,
                md_loss=md_sum / rows,
                mask_fraction=pass_total / rows,
                pseudo_accuracy=correct_total / rows,
                learning_rate=lr,
            )
        )

    for mode in ("adapter", "adapter+cache"):
        pred = adapter_classify(train_feats, params, text_feats, cache, cfg, mode)
        report.final_pseudo_accuracy[mode] = float(np.mean(pred.labels == pseudo))
    return params, report


def adapter_classify(
    f_test: EmbeddingMatrix,
    params: AdapterParams,
    text: EmbeddingMatrix,
    cache: CacheModel | None,
    cfg: RunConfig,
    mode: str | None = None,
) -> PredictionBatch:
    """Classify with adapted features; optionally fuse the cache term back in.

    ``adapter`` scores adapted image rows against adapted text rows;
    ``adapter+cache`` additionally adds the cache similarity term computed
    with the adapted test features (the cache itself stays frozen).
    """
    mode = cfg.adapter_mode if mode is None else mode
    if mode not in ("adapter", "adapter+cache"):
        raise ConfigError(f"unknown adapter mode {mode!r}")
    f_img = adapter_forward(f_test, params.image, params.alpha)
    f_txt = adapter_forward(text, params.text, params.beta)
    raw = similarity_logits(f_img, f_txt, cfg.logit_scale)
    logits_test = softmax_rows(raw)
    if mode == "adapter":
        labels, confidence = predict(logits_test)
        return PredictionBatch(raw, logits_test, labels, confidence, f_test.ids)
    if cache is None:
        raise ConfigError("adapter+cache mode requires a cache model")
    check_scale_consistency(cache, cfg)
    weights = similarity_weights(f_img, cache, logits_test, cfg.measure)
    logits_sim = similarity_prediction(weights.fused, cache.labels)
    logits_all = fuse(logits_test, logits_sim, cfg.gamma)
    probs = softmax_rows(logits_all)
    labels, confidence = predict(probs)
    return PredictionBatch(logits_all, probs, labels, confidence, f_test.ids)


@dataclass(frozen=True)
class CheckpointMeta:
    dim: int
    hidden: int
    alpha: float
    beta: float
    seed: int
    epoch: int


def save_adapters(params: AdapterParams, path, seed: int = 0, epoch: int = 0) -> None:
    with open(path, "wb") as fh:
        fh.write(
            _META.pack(_MAGIC, params.dim, params.hidden, params.alpha, params.beta, seed, epoch)
        )
        for arr in params.arrays():
            fh.write(arr.astype("<f4").tobytes(order="C"))


def load_adapters(path) -> tuple[AdapterParams, CheckpointMeta]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _META.size:
        raise FormatError(f"{path}: truncated checkpoint header at byte offset 0")
    magic, dim, hidden, alpha, beta, seed, epoch = _META.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r} at byte offset 0")
    offset = _META.size
    shapes = [(dim, hidden), (hidden,), (hidden, dim), (dim,)] * 2
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        nbytes = count * 4
        if len(blob) < offset + nbytes:
            raise FormatError(f"{path}: truncated weight block at byte offset {offset}")
        arrays.append(
            np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: unexpected trailing bytes at byte offset {offset}")
    params = AdapterParams(MLPParams(*arrays[:4]), MLPParams(*arrays[4:]), float(alpha), float(beta))
    return params, CheckpointMeta(dim, hidden, float(alpha), float(beta), seed, epoch)
