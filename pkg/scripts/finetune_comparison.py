"""Certified accuracy after consistency-regularised vs plain noisy cross-entropy fine-tuning.

    python scripts/finetune_comparison.py --seeds 0 1 2
"""
import argparse
import time

import torch

from smoothcert.harness.experiments import DeskSetup, finetune_comparison, mean_over_seeds


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--sigma", type=float, default=0.25)
    args = p.parse_args()
    torch.set_num_threads(1)

    setup = DeskSetup(num_classes=args.classes, sigma=args.sigma)
    radii = [0.0] + [args.sigma * k for k in (0.5, 1.0, 1.5, 2.0)]
    results = []
    for seed in args.seeds:
        t0 = time.time()
        res = finetune_comparison(setup, seed, radii)
        results.append(res)
        print(f"seed {seed} ({time.time() - t0:.0f}s): " +
              "  ".join(f"{k}={[round(a, 3) for a in v]}" for k, v in res.items()))
    avg = mean_over_seeds(results)
    print("radii", radii)
    for k, v in avg.items():
        print(f"{k:>12}: " + "  ".join(f"{100 * a:5.1f}" for a in v))
    margins = [100 * (c - r) for c, r in zip(avg["consistency"][1:], avg["rs"][1:])]
    print("consistency - rs margin (points) at r >= sigma/2:", [round(m, 1) for m in margins])


if __name__ == "__main__":
    main()
