"""Command line entry point::

    smoothcert <pretrain|finetune|probe|certify|report> --config PATH
               [--seed N] [--init-from CKPT] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..model import NumericError
from .config import MODES, ConfigError, dump_config, load_config
from .evaluate import certified_accuracy, format_table, run_certify, run_report
from .train import NumericAbort, run_finetune, run_pretrain, run_probe

log = logging.getLogger("smoothcert")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smoothcert", description="Denoising masked autoencoder "
                                "pre-training and randomized-smoothing certification.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--init-from", default=None, help="checkpoint to initialise from / certify")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def run(cfg) -> int:
    out = Path(cfg.checkpoint.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / f"{cfg.mode}-config.yaml")
    if cfg.mode == "pretrain":
        ckpt = run_pretrain(cfg)
        print(f"pretrain done: final loss {ckpt.meta['loss_history'][-1]:.6f} -> {out / 'pretrain-final.sckp'}")
    elif cfg.mode == "finetune":
        ckpt = run_finetune(cfg)
        print(f"finetune done: final loss {ckpt.meta['loss_history'][-1]:.6f} -> {out / 'finetune-final.sckp'}")
    elif cfg.mode == "probe":
        ckpt = run_probe(cfg)
        print(f"probe done: final loss {ckpt.meta['loss_history'][-1]:.6f} -> {out / 'probe-final.sckp'}")
    elif cfg.mode == "certify":
        records = run_certify(cfg)
        table = certified_accuracy(records, cfg.report.radii, sigma=cfg.certify.sigma)
        print(format_table(table))
        print(f"wrote {len(records)} rows to {out / cfg.certify.output}")
    else:
        table = run_report(cfg)
        print(format_table(table))
        print(f"wrote {out / cfg.report.output}.txt and .csv")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, mode=args.mode, validate=False)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.init_from is not None:
            cfg.checkpoint.init_from = args.init_from
        if args.out is not None:
            cfg.checkpoint.out_dir = args.out
        cfg.validate()
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericAbort, NumericError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
