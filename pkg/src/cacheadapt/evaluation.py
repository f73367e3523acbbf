"""Accuracy evaluation, the ablation grid, and machine-readable report files.

Reports are line-delimited JSON with a leading version record, one record
per evaluated mode, stable field order, and the effective config echoed into
every record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import adapter as adapter_mod
from .cache import CacheModel, build_cache
from .config import RunConfig
from .errors import DataError, FormatError
from .inference import cache_classify
from .store import DatasetManifest, EmbeddingMatrix
from .zeroshot import PredictionBatch, classify

REPORT_FORMAT = "cacheadapt-eval-report"
REPORT_VERSION = 1


@dataclass
class EvalReport:
    mode: str
    accuracy: float
    per_class_accuracy: list[float | None]
    confusion: np.ndarray  # (C, C) counts, truth rows x predicted columns
    sample_count: int
    config: dict = field(default_factory=dict)


def evaluate(predictions: PredictionBatch, manifest: DatasetManifest, mode: str = "",
             config: dict | None = None) -> EvalReport:
    """Top-1 accuracy, per-class accuracy, and the confusion matrix.

    Prediction rows align with the manifest through their sample ids; every
    predicted id must carry ground truth.
    """
    if len(predictions.ids) != predictions.batch_size:
        raise DataError("prediction batch carries no sample ids; cannot align with manifest")
    truth_map = manifest.truth_by_id()
    num_classes = manifest.num_classes
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for sid, pred in zip(predictions.ids, predictions.labels):
        if sid not in truth_map:
            raise DataError(f"sample id {sid!r} is missing from the manifest")
        truth = truth_map[sid]
        if truth is None:
            raise DataError(f"sample id {sid!r} carries no ground truth")
        confusion[truth, int(pred)] += 1
    total = int(confusion.sum())
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    per_class: list[float | None] = []
    for c in range(num_classes):
        row_total = int(confusion[c].sum())
        per_class.append(float(confusion[c, c] / row_total) if row_total else None)
    return EvalReport(mode, accuracy, per_class, confusion, total, dict(config or {}))


@dataclass(frozen=True)
class Fixture:
    """Everything the ablation grid needs: embeddings plus labeled manifest."""

    train: EmbeddingMatrix
    test: EmbeddingMatrix
    text: EmbeddingMatrix
    manifest: DatasetManifest


def _eval_cache_mode(fixture: Fixture, cfg: RunConfig, cache: CacheModel, mode_name: str) -> EvalReport:
    pred = cache_classify(fixture.test, cache, fixture.text, cfg)
    return evaluate(pred, fixture.manifest, mode_name, cfg.to_dict())


def ablation_suite(fixture: Fixture, cfg: RunConfig) -> list[EvalReport]:
    """One report per component/filter/measure cell, mirroring the ablation axes.

    Modes: zero-shot; cache with feature-only measure; cache with the full
    multi-level measure; adapters trained without the marginal loss;
    adapters trained with both losses. Filter cells rebuild the cache under
    each filter strategy; measure cells swap the similarity measure on the
    double-filtered cache.
    """
    cfg.validate()
    reports: list[EvalReport] = []

    zs = classify(fixture.test, fixture.text, cfg.logit_scale)
    reports.append(evaluate(zs, fixture.manifest, "zeroshot", cfg.to_dict()))

    cache = build_cache(fixture.train, fixture.text, cfg)
    for measure, name in (("feature", "cache-feature"), ("multilevel", "cache-multilevel")):
        mcfg = cfg.replace(measure=measure)
        reports.append(_eval_cache_mode(fixture, mcfg, cache, name))

    for lam, name in ((0.0, "adapter-ce"), (cfg.lambda_md, "adapter-full")):
        tcfg = cfg.replace(lambda_md=lam)
        params, _ = adapter_mod.train(fixture.train, fixture.text, cache, tcfg)
        pred = adapter_mod.adapter_classify(fixture.test, params, fixture.text, cache, tcfg, "adapter")
        reports.append(evaluate(pred, fixture.manifest, name, tcfg.to_dict()))

    for filter_mode in ("none", "confidence", "prototype", "double"):
        fcfg = cfg.replace(filter_mode=filter_mode)
        fcache = build_cache(fixture.train, fixture.text, fcfg)
        reports.append(_eval_cache_mode(fixture, fcfg, fcache, f"filter-{filter_mode}"))

    for measure in ("feature", "semantic", "multilevel"):
        mcfg = cfg.replace(measure=measure)
        reports.append(_eval_cache_mode(fixture, mcfg, cache, f"measure-{measure}"))
    return reports


def _report_record(r: EvalReport) -> dict:
    return {
        "mode": r.mode,
        "accuracy": r.accuracy,
        "per_class_accuracy": r.per_class_accuracy,
        "confusion": np.asarray(r.confusion).tolist(),
        "sample_count": r.sample_count,
        "config": r.config,
    }


def emit_report(reports: list[EvalReport], path) -> None:
    """Write reports as JSON lines behind a version header; stable field order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": REPORT_FORMAT, "version": REPORT_VERSION}) + "\n")
        for r in reports:
            fh.write(json.dumps(_report_record(r)) + "\n")


def parse_report(path) -> list[EvalReport]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise FormatError(f"{path}: empty report file, missing version header")
    header = json.loads(lines[0])
    if header.get("format") != REPORT_FORMAT or header.get("version") != REPORT_VERSION:
        raise FormatError(f"{path}: unsupported report header {header!r}")
    reports = []
    for line in lines[1:]:
        rec = json.loads(line)
        reports.append(
            EvalReport(
                mode=rec["mode"],
                accuracy=rec["accuracy"],
                per_class_accuracy=rec["per_class_accuracy"],
                confusion=np.asarray(rec["confusion"], dtype=np.int64),
                sample_count=rec["sample_count"],
                config=rec["config"],
            )
        )
    return reports
