"""Chain three single-feature shifters in a random-direction world and an orthogonal one.

Prints pairwise cosines between the feature directions next to the counts,
which shows when a later shift undoes an earlier feature.
"""
import argparse

import numpy as np

from _common import fit_and_train
from latentshift.evalharness import EvalConfig, run_multi_feature_eval
from latentshift.world import WorldConfig, make_world


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--offset", type=float, default=-1.0)
    args = ap.parse_args()

    print("world,seed,cos01,cos02,cos12,original,baseline,lfs")
    for orthogonal in (False, True):
        for seed in range(args.seeds):
            world = make_world(WorldConfig(d=32, m=3, offsets=(args.offset,) * 3, orthogonal=orthogonal,
                                           seed=seed))
            A = world.linear_directions
            cos = (A @ A.T)[np.triu_indices(3, 1)]
            axes, models = [], []
            for j in range(3):
                axis, model, *_ = fit_and_train(world, j, 10 * seed + j, epochs=args.epochs)
                axes.append(axis)
                models.append(model)
            rep = run_multi_feature_eval(world, axes, models, [0, 1, 2], EvalConfig(seed=seed))
            fmt = lambda c: "/".join(map(str, c))
            print(f"{'orthogonal' if orthogonal else 'random'},{seed},{cos[0]:.3f},{cos[1]:.3f},{cos[2]:.3f},"
                  f"{fmt(rep.counts['original'])},{fmt(rep.counts['baseline'])},{fmt(rep.counts['lfs'])}")


if __name__ == "__main__":
    main()
