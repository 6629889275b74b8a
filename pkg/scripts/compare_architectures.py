"""Train architectures a-e on one synthetic pairs dataset and print the comparison table.

    python3 scripts/compare_architectures.py --d 32 --epochs 10
"""
import argparse

from _common import fit_and_train
from latentshift.shifter import build_arch, param_count
from latentshift.world import WorldConfig, make_world


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--learning-rate", type=float, default=1e-5)
    ap.add_argument("--candidates", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    world = make_world(WorldConfig(d=args.d, m=1, seed=args.seed))
    print("architecture,mse,mae,r2,params,initial_valid,final_valid")
    for arch in "abcde":
        _, _, hist, m, _ = fit_and_train(world, 0, args.seed, n_candidates=args.candidates, epochs=args.epochs,
                                         arch=arch, learning_rate=args.learning_rate)
        print(f"{arch},{m.mse:.6f},{m.mae:.6f},{m.r2:.4f},{param_count(build_arch(arch, args.d, 1))},"
              f"{hist.initial_valid_loss:.5f},{hist.valid_loss[-1]:.5f}")


if __name__ == "__main__":
    main()
