"""Command-line interface wiring configs, file IO, and every pipeline.

Subcommands: ``gen-synthetic``, ``build-cache``, ``infer``, ``train``,
``eval``, ``sweep``. Flags mirror RunConfig fields in kebab-case and
override values from ``--config``. Exit codes: 0 success, 2 usage/config
error, 3 data/format error, 4 numerical failure.

Every command is deterministic given its inputs, config, and seed; the
effective config is echoed into every emitted artifact.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import adapter as adapter_mod
from .cache import CacheModel, build_cache, load_cache, save_cache
from .config import ADAPTER_MODES, FILTER_MODES, LR_SCHEDULES, MEASURES, OPTIMIZERS, RunConfig, load_config
from .errors import CacheAdaptError, ConfigError, DataError
from .evaluation import EvalReport, Fixture, ablation_suite, emit_report, evaluate
from .inference import cache_classify
from .store import (
    EmbeddingMatrix,
    l2_normalize,
    load_embeddings,
    load_class_names,
    load_manifest,
    save_embeddings,
    save_manifest,
)
from .synthetic import SyntheticSpec, generate_synthetic
from .zeroshot import PredictionBatch, classify


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML key-value config file")
    p.add_argument("--logit-scale", type=float, dest="logit_scale")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--protos-per-class", type=int, dest="protos_per_class")
    p.add_argument("--gamma", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda-md", type=float, dest="lambda_md")
    p.add_argument("--hidden-ratio", type=int, dest="hidden_ratio")
    p.add_argument("--optimizer", choices=OPTIMIZERS)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--momentum", type=float)
    p.add_argument("--lr-schedule", choices=LR_SCHEDULES, dest="lr_schedule")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--adapter-mode", choices=ADAPTER_MODES, dest="adapter_mode")
    p.add_argument("--filter-mode", choices=FILTER_MODES, dest="filter_mode")
    p.add_argument("--measure", choices=MEASURES)
    p.add_argument(
        "--proto-score-global",
        action=argparse.BooleanOptionalAction,
        dest="proto_score_global",
        default=None,
        help="score prototypes against all confident samples instead of per class",
    )
    p.add_argument("--seed", type=int)


def _effective_config(args) -> RunConfig:
    overrides = {
        f.name: getattr(args, f.name, None) for f in dataclasses.fields(RunConfig)
    }
    return load_config(args.config, overrides)


def _require_file(path: Path, what: str) -> Path:
    if not Path(path).is_file():
        raise ConfigError(f"{what} file not found: {path}")
    return path


def _load_matrix(path: Path, what: str) -> EmbeddingMatrix:
    return l2_normalize(load_embeddings(_require_file(path, what)))


def _load_text(args) -> EmbeddingMatrix:
    text = _load_matrix(args.text_embeddings, "text embeddings")
    if getattr(args, "class_names", None):
        names = load_class_names(_require_file(args.class_names, "class names"))
        if len(names) != text.rows:
            raise DataError(
                f"class-names file lists {len(names)} classes "
                f"but text embeddings hold {text.rows} rows"
            )
    return text


def _write_predictions(pred: PredictionBatch, path: Path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# config " + json.dumps(cfg.to_dict()) + "\n")
        for sid, label, conf in zip(pred.ids, pred.labels, pred.confidence):
            fh.write(f"{sid}\t{int(label)}\t{float(conf)!r}\n")


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        num_classes=args.classes,
        dim=args.dim,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        sigma=args.sigma,
        text_noise=args.text_noise,
        seed=args.seed if args.seed is not None else SyntheticSpec.seed,
    )
    train, test, text, manifest = generate_synthetic(spec)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_embeddings(train, out / "train.tfb")
    save_embeddings(test, out / "test.tfb")
    save_embeddings(text, out / "text.tfb")
    save_manifest(manifest, out / "manifest.tsv", out / "classes.txt",
                  header_comment="synthetic planted-cluster fixture")
    with open(out / "fixture.json", "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote fixture to {out}: {train.rows} train / {test.rows} test rows, "
          f"{text.rows} classes, d={train.dim}")
    return 0


def cmd_build_cache(args) -> int:
    cfg = _effective_config(args)
    train = _load_matrix(args.train_embeddings, "training embeddings")
    text = _load_text(args)
    cache = build_cache(train, text, cfg)
    save_cache(cache, args.output)
    counts = cache.meta.per_class_counts
    print(f"cache written to {args.output}: {cache.size} prototypes over "
          f"{cache.meta.num_classes} classes (d={cache.dim})")
    print("per-class counts: " + ",".join(str(c) for c in counts))
    for c, n in enumerate(counts):
        if n == 0:
            print(f"warning: class {c} has no prototypes", file=sys.stderr)
    return 0


def _resolve_infer_mode(args, cfg: RunConfig) -> str:
    if args.no_cache:
        return "zeroshot"
    if args.adapter_checkpoint:
        return cfg.adapter_mode
    return "cache"


def _predict_for_mode(mode, test, text, cache, params, cfg) -> PredictionBatch:
    if mode == "zeroshot":
        return classify(test, text, cfg.logit_scale)
    if mode == "cache":
        if cache is None:
            raise ConfigError("cache mode requires --cache")
        return cache_classify(test, cache, text, cfg)
    if params is None:
        raise ConfigError(f"mode {mode!r} requires --adapter-checkpoint")
    if mode == "adapter+cache" and cache is None:
        raise ConfigError("adapter+cache mode requires --cache")
    return adapter_mod.adapter_classify(test, params, text, cache, cfg, mode)


def _load_optional_cache(args) -> CacheModel | None:
    if getattr(args, "cache", None):
        return load_cache(_require_file(args.cache, "cache"))
    return None


def _load_optional_adapters(args):
    if getattr(args, "adapter_checkpoint", None):
        params, _ = adapter_mod.load_adapters(
            _require_file(args.adapter_checkpoint, "adapter checkpoint")
        )
        return params
    return None


def cmd_infer(args) -> int:
    cfg = _effective_config(args)
    test = _load_matrix(args.test_embeddings, "test embeddings")
    text = _load_text(args)
    cache = _load_optional_cache(args)
    params = _load_optional_adapters(args)
    mode = _resolve_infer_mode(args, cfg)
    pred = _predict_for_mode(mode, test, text, cache, params, cfg)
    _write_predictions(pred, args.output, cfg)
    print(f"{mode} predictions for {pred.batch_size} samples written to {args.output}")
    return 0


def _emit_train_report(report: adapter_mod.TrainReport, path: Path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": "cacheadapt-train-report", "version": 1,
                             "config": cfg.to_dict()}) + "\n")
        for e in report.epochs:
            fh.write(json.dumps({
                "epoch": e.epoch,
                "ce_loss": e.ce_loss,
                "md_loss": e.md_loss,
                "mask_fraction": e.mask_fraction,
                "pseudo_accuracy": e.pseudo_accuracy,
                "learning_rate": e.learning_rate,
            }) + "\n")
        fh.write(json.dumps({"final_pseudo_accuracy": report.final_pseudo_accuracy}) + "\n")


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    train_feats = _load_matrix(args.train_embeddings, "training embeddings")
    text = _load_text(args)
    cache = load_cache(_require_file(args.cache, "cache"))
    params, report = adapter_mod.train(train_feats, text, cache, cfg)
    adapter_mod.save_adapters(params, args.output, seed=cfg.seed, epoch=cfg.epochs)
    if args.report:
        _emit_train_report(report, args.report, cfg)
    last = report.epochs[-1]
    print(f"adapters written to {args.output} after {cfg.epochs} epochs "
          f"(final ce={last.ce_loss:.6f} md={last.md_loss:.6f} "
          f"mask={last.mask_fraction:.3f} pseudo-acc={last.pseudo_accuracy:.3f})")
    return 0


def cmd_eval(args) -> int:
    cfg = _effective_config(args)
    test = _load_matrix(args.test_embeddings, "test embeddings")
    text = _load_text(args)
    manifest = load_manifest(
        _require_file(args.manifest, "manifest"), _require_file(args.class_names, "class names")
    )
    if args.suite:
        if not args.train_embeddings:
            raise ConfigError("--suite requires --train-embeddings")
        train_feats = _load_matrix(args.train_embeddings, "training embeddings")
        reports = ablation_suite(Fixture(train_feats, test, text, manifest), cfg)
    else:
        cache = _load_optional_cache(args)
        params = _load_optional_adapters(args)
        pred = _predict_for_mode(args.mode, test, text, cache, params, cfg)
        reports = [evaluate(pred, manifest, args.mode, cfg.to_dict())]
    emit_report(reports, args.output)
    for r in reports:
        print(f"{r.mode}: accuracy {r.accuracy:.4f} over {r.sample_count} samples")
    return 0


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"invalid numeric list {text!r}") from exc


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"invalid integer list {text!r}") from exc


def cmd_sweep(args) -> int:
    cfg = _effective_config(args)
    test = _load_matrix(args.test_embeddings, "test embeddings")
    text = _load_text(args)
    train_feats = _load_matrix(args.train_embeddings, "training embeddings")
    manifest = load_manifest(
        _require_file(args.manifest, "manifest"), _require_file(args.class_names, "class names")
    )
    alphas = _parse_float_list(args.alphas) if args.alphas else [cfg.alpha]
    betas = _parse_float_list(args.betas) if args.betas else [cfg.beta]
    gammas = _parse_float_list(args.gammas) if args.gammas else [cfg.gamma]
    top_ks = _parse_int_list(args.top_ks) if args.top_ks else [cfg.top_k]
    protos = _parse_int_list(args.protos) if args.protos else [cfg.protos_per_class]
    train_adapters = bool(args.alphas or args.betas)

    reports: list[EvalReport] = []
    for k in top_ks:
        for n in protos:
            for gamma in gammas:
                base = cfg.replace(top_k=k, protos_per_class=n, gamma=gamma)
                cache = build_cache(train_feats, text, base)
                if not train_adapters:
                    pred = cache_classify(test, cache, text, base)
                    reports.append(evaluate(pred, manifest, "cache", base.to_dict()))
                    continue
                for alpha in alphas:
                    for beta in betas:
                        point = base.replace(alpha=alpha, beta=beta)
                        rng = np.random.default_rng(point.seed)
                        init = adapter_mod.init_adapter_params(
                            train_feats.dim, point.hidden_ratio, alpha, beta, rng
                        )
                        pred = adapter_mod.adapter_classify(
                            test, init, text, cache, point, "adapter"
                        )
                        reports.append(evaluate(pred, manifest, "adapter-init", point.to_dict()))
                        params, _ = adapter_mod.train(train_feats, text, cache, point)
                        pred = adapter_mod.adapter_classify(
                            test, params, text, cache, point, point.adapter_mode
                        )
                        reports.append(
                            evaluate(pred, manifest, "adapter-trained", point.to_dict())
                        )
    emit_report(reports, args.output)
    print(f"sweep wrote {len(reports)} reports to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cacheadapt",
        description="Training-free adaptation of vision-language classifiers "
                    "over precomputed embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a planted-cluster fixture")
    p.add_argument("--output-dir", type=Path, required=True)
    p.add_argument("--classes", type=int, default=SyntheticSpec.num_classes)
    p.add_argument("--dim", type=int, default=SyntheticSpec.dim)
    p.add_argument("--train-per-class", type=int, default=SyntheticSpec.train_per_class)
    p.add_argument("--test-per-class", type=int, default=SyntheticSpec.test_per_class)
    p.add_argument("--sigma", type=float, default=SyntheticSpec.sigma)
    p.add_argument("--text-noise", type=float, default=SyntheticSpec.text_noise)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-cache", help="build the prototype cache from training embeddings")
    p.add_argument("--train-embeddings", type=Path, required=True)
    p.add_argument("--text-embeddings", type=Path, required=True)
    p.add_argument("--class-names", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_build_cache)

    p = sub.add_parser("infer", help="classify test embeddings")
    p.add_argument("--test-embeddings", type=Path, required=True)
    p.add_argument("--text-embeddings", type=Path, required=True)
    p.add_argument("--class-names", type=Path)
    p.add_argument("--cache", type=Path)
    p.add_argument("--adapter-checkpoint", type=Path)
    p.add_argument("--no-cache", action="store_true", help="pure zero-shot inference")
    p.add_argument("--output", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="train the residual adapters against pseudo-labels")
    p.add_argument("--train-embeddings", type=Path, required=True)
    p.add_argument("--text-embeddings", type=Path, required=True)
    p.add_argument("--class-names", type=Path)
    p.add_argument("--cache", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--report", type=Path, help="write the per-epoch training report here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a mode (or the full ablation suite)")
    p.add_argument("--test-embeddings", type=Path, required=True)
    p.add_argument("--text-embeddings", type=Path, required=True)
    p.add_argument("--class-names", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--mode", choices=("zeroshot", "cache", "adapter", "adapter+cache"),
                   default="cache")
    p.add_argument("--cache", type=Path)
    p.add_argument("--adapter-checkpoint", type=Path)
    p.add_argument("--suite", action="store_true", help="run every ablation cell")
    p.add_argument("--train-embeddings", type=Path, help="required with --suite")
    p.add_argument("--output", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid-sweep residual ratios, cache sizes, or gamma")
    p.add_argument("--train-embeddings", type=Path, required=True)
    p.add_argument("--test-embeddings", type=Path, required=True)
    p.add_argument("--text-embeddings", type=Path, required=True)
    p.add_argument("--class-names", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--alphas", help="comma-separated alpha grid (triggers adapter training)")
    p.add_argument("--betas", help="comma-separated beta grid (triggers adapter training)")
    p.add_argument("--gammas", help="comma-separated gamma grid")
    p.add_argument("--top-ks", dest="top_ks", help="comma-separated confidence-filter sizes")
    p.add_argument("--protos", help="comma-separated prototype counts per class")
    p.add_argument("--output", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CacheAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
