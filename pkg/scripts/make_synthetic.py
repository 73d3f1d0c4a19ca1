"""Write synthetic stripe datasets in the SCDS1 format.

    python scripts/make_synthetic.py --out data --classes 4
"""
import argparse
from pathlib import Path

from smoothcert.harness.data import make_synthetic, save_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--train", type=int, default=512)
    p.add_argument("--test", type=int, default=256)
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, count, offset in (("train", args.train, 100), ("test", args.test, 200)):
        ds = make_synthetic(offset + args.seed, count, args.size, args.classes)
        save_dataset(ds, out / f"{split}.scds")
        print(f"{split}: {len(ds)} images of shape {ds.image_shape}, {ds.num_classes} classes")


if __name__ == "__main__":
    main()
