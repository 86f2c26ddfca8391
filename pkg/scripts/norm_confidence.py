"""Bucket images by the norm of their ConSE vector and report hit@1 per bucket.

The combined vector is never renormalized, so a short vector means the
classifier spread its mass over labels that point in different directions.
This script checks whether that norm tracks zero-shot accuracy.
"""

import argparse
import tempfile

import numpy as np

from conse.evaluation import EvalConfig, evaluate_batch
from conse.synth import SynthConfig, generate, load_bundle


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--T", type=int, default=10)
    parser.add_argument("--bins", type=int, default=4)
    parser.add_argument("--noise", type=float, default=0.5)
    args = parser.parse_args()

    cfg = SynthConfig(
        seed=args.seed, q=16, n0=16, n1=40, clusters=4, noise=args.noise,
        plant_fraction=0.5, images_per_label=20, temperature=0.3,
    )
    with tempfile.TemporaryDirectory() as tmp:
        assets, records = load_bundle(generate(cfg, tmp))
    report = evaluate_batch(records, EvalConfig(T=args.T, ks=(1,)), assets)

    norms = np.array([r.norm for r in report.images])
    hits = np.array([r.hits[1] for r in report.images])
    edges = np.quantile(norms, np.linspace(0, 1, args.bins + 1))
    which = np.clip(np.searchsorted(edges, norms, side="right") - 1, 0, args.bins - 1)
    print(f"ConSE({args.T}) on {len(norms)} images, overall hit@1 {100 * hits.mean():.1f}%")
    print(f"{'norm range':<20}{'images':>8}{'hit@1 %':>10}")
    for b in range(args.bins):
        mask = which == b
        if mask.any():
            span = f"[{edges[b]:.3f}, {edges[b + 1]:.3f}]"
            print(f"{span:<20}{mask.sum():>8}{100 * hits[mask].mean():>10.1f}")
    print(f"corr(norm, hit) = {np.corrcoef(norms, hits)[0, 1]:.3f}")


if __name__ == "__main__":
    main()
