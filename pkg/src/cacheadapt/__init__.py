"""Training-free adaptation of vision-language classifiers over precomputed embeddings.

The numerical core is encoder-agnostic: embeddings arrive through the TFB
file format (or as in-memory matrices), get L2-canonicalized once at
ingestion, and flow through zero-shot scoring, prototype-cache construction,
multi-level similarity inference, and optional residual-adapter training.
"""

from .adapter import (
    AdapterParams,
    MLPParams,
    TrainReport,
    adapter_classify,
    adapter_forward,
    ce_masked_loss,
    init_adapter_params,
    load_adapters,
    loss_and_grads,
    marginal_entropy_loss,
    save_adapters,
    train,
)
from .cache import (
    CacheMeta,
    CacheModel,
    PseudoLabelSet,
    build_cache,
    confidence_filter,
    load_cache,
    prototype_filter,
    prototype_score,
    pseudo_label,
    save_cache,
)
from .config import RunConfig, load_config
from .errors import CacheAdaptError, ConfigError, DataError, FormatError, NumericalError
from .evaluation import EvalReport, Fixture, ablation_suite, emit_report, evaluate, parse_report
from .inference import (
    SimilarityWeights,
    cache_classify,
    feature_similarity,
    fuse,
    kl_divergence,
    multi_level,
    semantic_similarity,
    similarity_prediction,
    similarity_weights,
)
from .store import (
    DatasetManifest,
    EmbeddingMatrix,
    ManifestEntry,
    ValidationReport,
    l2_normalize,
    load_class_names,
    load_embeddings,
    load_manifest,
    save_embeddings,
    save_manifest,
    validate_manifest,
)
from .synthetic import SyntheticSpec, generate_synthetic
from .zeroshot import PredictionBatch, classify, predict, similarity_logits, softmax_rows

__version__ = "0.1.0"

__all__ = [
    "AdapterParams",
    "CacheAdaptError",
    "CacheMeta",
    "CacheModel",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "EmbeddingMatrix",
    "EvalReport",
    "Fixture",
    "FormatError",
    "ManifestEntry",
    "MLPParams",
    "NumericalError",
    "PredictionBatch",
    "PseudoLabelSet",
    "RunConfig",
    "SimilarityWeights",
    "SyntheticSpec",
    "TrainReport",
    "ValidationReport",
    "ablation_suite",
    "adapter_classify",
    "adapter_forward",
    "build_cache",
    "cache_classify",
    "ce_masked_loss",
    "classify",
    "confidence_filter",
    "emit_report",
    "evaluate",
    "feature_similarity",
    "fuse",
    "generate_synthetic",
    "init_adapter_params",
    "kl_divergence",
    "l2_normalize",
    "load_adapters",
    "load_cache",
    "load_class_names",
    "load_config",
    "load_embeddings",
    "load_manifest",
    "loss_and_grads",
    "marginal_entropy_loss",
    "multi_level",
    "parse_report",
    "predict",
    "prototype_filter",
    "prototype_score",
    "pseudo_label",
    "save_adapters",
    "save_cache",
    "save_embeddings",
    "save_manifest",
    "semantic_similarity",
    "similarity_logits",
    "similarity_prediction",
    "similarity_weights",
    "softmax_rows",
    "train",
    "validate_manifest",
]
