"""Ablate the starting magnification factor of the annealing schedule.

Usage:
    python scripts/sweep_lambda0.py --config configs/desk.cfg --out runs/lambda0 \
        --values 1 3 5 7 9 --seeds 11 23 37
"""

import argparse
import sys

from detlab.config import ConfigError, load_config
from detlab.harness import sweep


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--values", type=float, nargs="+",
                        default=[1.0, 3.0, 5.0, 7.0, 9.0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[11, 23, 37])
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    rows = sweep(cfg, "lambda0", args.values, args.seeds, args.out)
    for row in rows:
        print(f"lambda0 {row['value']:>4s}: median ap_mean {row['ap_mean']:.4f}"
              f" (failed {row['n_failed']}/{row['n_seeds']})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
