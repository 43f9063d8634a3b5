"""Overfit the toy identity set over several seeds; report steps to the target accuracy."""

import argparse
import time

from mixfacenet.training import TrainConfig, train_toy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--target", type=float, default=0.95)
    ap.add_argument("--full", action="store_true", help="run all steps instead of stopping at the target")
    args = ap.parse_args()
    for seed in args.seeds:
        t0 = time.perf_counter()
        tc = TrainConfig(steps=args.steps, seed=seed, eval_every=10,
                         stop_at=None if args.full else args.target)
        res = train_toy(tc)
        print(f"seed {seed}: accuracy {res.final_accuracy:.3f} after {res.steps_run} steps "
              f"(final loss {res.curve[-1][1]:.4g}, {time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
