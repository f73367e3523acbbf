#!/usr/bin/env python3
"""Sensitivity sweep of the residual ratios: train adapters over an
alpha x beta grid on a synthetic fixture and print test accuracy per point."""

import argparse
import sys

from cacheadapt import (
    RunConfig,
    SyntheticSpec,
    adapter_classify,
    build_cache,
    evaluate,
    generate_synthetic,
    train,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--alphas", default="0,0.2,0.4,0.6,0.8",
                        help="comma-separated image residual ratios")
    parser.add_argument("--betas", default="0.1,0.3,0.5,0.7,0.9",
                        help="comma-separated text residual ratios")
    parser.add_argument("--sigma", type=float, default=0.4)
    parser.add_argument("--text-noise", type=float, default=0.3)
    parser.add_argument("--epochs", type=int, default=8)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    alphas = [float(x) for x in args.alphas.split(",")]
    betas = [float(x) for x in args.betas.split(",")]
    spec = SyntheticSpec(sigma=args.sigma, text_noise=args.text_noise, seed=args.seed)
    train_m, test_m, text_m, manifest = generate_synthetic(spec)

    base = RunConfig(epochs=args.epochs, seed=args.seed).validate()
    cache = build_cache(train_m, text_m, base)
    print(f"fixture sigma={args.sigma} text_noise={args.text_noise}; "
          f"cache holds {cache.size} prototypes")
    header = "alpha\\beta " + " ".join(f"{b:>7.2f}" for b in betas)
    print(header)
    best = (-1.0, None, None)
    for alpha in alphas:
        cells = []
        for beta in betas:
            cfg = base.replace(alpha=alpha, beta=beta)
            params, _ = train(train_m, text_m, cache, cfg)
            pred = adapter_classify(test_m, params, text_m, cache, cfg, "adapter")
            acc = evaluate(pred, manifest, "adapter").accuracy
            cells.append(acc)
            if acc > best[0]:
                best = (acc, alpha, beta)
        print(f"{alpha:>10.2f} " + " ".join(f"{a:>7.4f}" for a in cells))
    print(f"best accuracy {best[0]:.4f} at alpha={best[1]} beta={best[2]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
