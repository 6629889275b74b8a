"""Original / baseline / LFS counts on a curved-boundary world, over several seeds.

    python3 scripts/quadratic_ab.py --seeds 5 --alignment 1.0 --curvature -1
"""
import argparse

import numpy as np

from _common import fit_and_train
from latentshift.evalharness import EvalConfig, run_single_feature_eval
from latentshift.world import WorldConfig, make_world


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--curvature", type=float, default=-1.0)
    ap.add_argument("--offset", type=float, default=-0.5)
    ap.add_argument("--gain", type=float, default=2.0)
    ap.add_argument("--alignment", type=float, default=1.0, help="cosine between curvature and linear direction")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--multiplier", type=float, default=1.0)
    ap.add_argument("--n-eval", type=int, default=1000)
    args = ap.parse_args()

    rows = []
    print("seed,original,baseline,lfs,test_r2,tuples")
    for seed in range(args.seeds):
        world = make_world(WorldConfig(d=args.d, m=1, kinds=("quadratic",), curvatures=(args.curvature,),
                                       offsets=(args.offset,), gains=(args.gain,),
                                       curvature_alignment=(args.alignment,), seed=seed))
        axis, model, _, metrics, diag = fit_and_train(world, 0, seed, epochs=args.epochs,
                                                      multiplier=args.multiplier)
        cfg = EvalConfig(n_samples=args.n_eval, multipliers=(args.multiplier,), seed=5000 + seed)
        rep = run_single_feature_eval(world, axis, model, 0, cfg)
        counts = [rep.counts[p][0] for p in ("original", "baseline", "lfs")]
        rows.append(counts)
        print(f"{seed},{counts[0]},{counts[1]},{counts[2]},{metrics.r2:.4f},{diag['n_accepted']}")
    o, b, l = np.median(rows, axis=0)
    print(f"median,{o:g},{b:g},{l:g}")


if __name__ == "__main__":
    main()
