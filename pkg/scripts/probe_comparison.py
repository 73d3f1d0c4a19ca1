"""Linear-probe certified accuracy: denoising-masked pre-training vs a random encoder.

    python scripts/probe_comparison.py --seeds 0 1 2
"""
import argparse
import time

import torch

from smoothcert.harness.experiments import DeskSetup, mean_over_seeds, probe_comparison

RADII = [0.0, 0.25, 0.5]


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--classes", type=int, default=4)
    args = p.parse_args()
    torch.set_num_threads(1)

    setup = DeskSetup(num_classes=args.classes)
    results = []
    for seed in args.seeds:
        t0 = time.time()
        res = probe_comparison(setup, seed, RADII)
        results.append(res)
        print(f"seed {seed} ({time.time() - t0:.0f}s): " +
              "  ".join(f"{k}={[round(a, 3) for a in v]}" for k, v in res.items()))
    avg = mean_over_seeds(results)
    print("radii", RADII)
    for k, v in avg.items():
        print(f"{k:>8}: " + "  ".join(f"{100 * a:5.1f}" for a in v))
    print(f"gap at r=0.25: {100 * (avg['dmae'][1] - avg['random'][1]):+.1f} points")


if __name__ == "__main__":
    main()
