"""Train the four headline variants and tabulate median AP over seeds.

Usage:
    python scripts/compare_modes.py --config configs/desk.cfg --out runs/compare \
        --seeds 11 23 37
"""

import argparse
import csv
import statistics
import sys
from pathlib import Path

from detlab.config import ConfigError, load_config, with_updates
from detlab.harness import run_experiment

MODES = {
    "baseline": dict(mode="baseline"),
    "rga": dict(mode="rga", rga_enabled=True),
    "prm": dict(mode="prm", ratios=((1, 1), (1, 9))),
    "rga+prm": dict(mode="rga+prm", ratios=((1, 1), (1, 9)), rga_enabled=True),
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seeds", type=int, nargs="+", default=[11, 23, 37])
    args = parser.parse_args(argv)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        base = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    rows = []
    for name, overrides in MODES.items():
        summaries = []
        for seed in args.seeds:
            cfg = with_updates(
                base, seed=seed,
                out=str(out_dir / name.replace("+", "_") / f"seed{seed}"),
                **overrides,
            )
            result = run_experiment(cfg)
            summaries.append(result.summary)
            print(f"{name} seed {seed}: ap_mean {result.summary['ap_mean']:.4f}")
        row = {"mode": name, "n_seeds": len(args.seeds)}
        for key in ("ap_mean", "ap50", "ap75", "ap_bucket_1_3", "ap_bucket_8_inf"):
            row[key] = statistics.median(s[key] for s in summaries)
        rows.append(row)

    with open(out_dir / "mode_comparison.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"{row['mode']:9s} median ap_mean {row['ap_mean']:.4f} "
              f"ap50 {row['ap50']:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
