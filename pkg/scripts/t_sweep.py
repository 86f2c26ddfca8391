"""Sweep T and the candidate mode on a synthetic bundle and print a hit@k table.

    python scripts/t_sweep.py --seed 2 --n0 12 --n1 8 --noise 0.3 --Ts 1 2 5 10
"""

import argparse
import tempfile
from dataclasses import fields

from conse.evaluation import DEFAULT_KS, CandidateMode, EvalConfig, evaluate_batch
from conse.synth import SynthConfig, generate, load_bundle


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--bundle", help="existing bundle directory (otherwise one is generated)")
    parser.add_argument("--Ts", type=int, nargs="+", default=[1, 2, 5, 10])
    parser.add_argument("--ks", type=int, nargs="+", default=list(DEFAULT_KS))
    for f in fields(SynthConfig):
        kind = float if f.type in ("float", "Optional[float]") else int
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=f.default)
    return parser.parse_args()


def main():
    args = parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        root = args.bundle
        if root is None:
            cfg = SynthConfig(**{f.name: getattr(args, f.name) for f in fields(SynthConfig)})
            root = generate(cfg, tmp)
        assets, records = load_bundle(root)

    n0 = assets.catalog.n0
    ks = sorted(set(args.ks))
    print(f"{len(records)} images, n0={n0}, n1={assets.catalog.n1}")
    for mode in CandidateMode:
        print(f"\n{mode.value}")
        print(f"{'model':<12}" + "".join(f"{'hit@' + str(k):>9}" for k in ks))
        for T in args.Ts:
            T = min(T, n0)
            report = evaluate_batch(records, EvalConfig(T=T, candidate_mode=mode, ks=ks), assets)
            print(f"{f'ConSE({T})':<12}" + "".join(f"{report.hit_at_k[k]:>9.1f}" for k in ks))


if __name__ == "__main__":
    main()
