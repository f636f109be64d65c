"""Command-line entry point: gen-data, train, eval, sweep, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import MODES, SAMPLING_MODES, ConfigError, load_config
from .harness import (
    evaluate_model,
    run_experiment,
    sweep,
    write_eval_report,
    _dataset,
)
from .prm import PrmModel


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--mode", choices=MODES, default=None)
    parser.add_argument("--sampling", choices=SAMPLING_MODES, default=None)


def _load(args):
    return load_config(args.config, seed=args.seed, mode=args.mode,
                       sampling=args.sampling, out=args.out)


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _dataset(cfg, out_dir, "train", cfg.train_scenes)
    _dataset(cfg, out_dir, "eval", cfg.eval_scenes)
    print(f"wrote datasets under {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    result = run_experiment(cfg)
    print(f"run complete: {result.out_dir}")
    print(json.dumps({k: v for k, v in result.summary.items()
                      if isinstance(v, (int, float, str))}, indent=2, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    out_dir = Path(cfg.out)
    checkpoint = Path(args.checkpoint or out_dir / "checkpoint.npz")
    if not checkpoint.exists():
        raise FileNotFoundError(f"no checkpoint at {checkpoint}")
    from .net import load_params

    backbone, heads = load_params(checkpoint)
    model = PrmModel(backbone=backbone, heads=heads, policies=cfg.policies)
    scenes = _dataset(cfg, out_dir, "eval", cfg.eval_scenes)
    result = evaluate_model(model, scenes, cfg)
    write_eval_report(result, out_dir / "eval_report.txt")
    print((out_dir / "eval_report.txt").read_text(), end="")
    return 0


def _parse_sweep_values(axis: str, raw: str):
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if axis == "lambda0":
        return [float(p) for p in parts]
    if axis == "ratio-pair":
        values = []
        for part in parts:
            pair = []
            for ratio in part.split("+"):
                p, n = ratio.split(":")
                pair.append((int(p), int(n)))
            values.append(tuple(pair))
        return values
    return parts


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = _parse_sweep_values(args.axis, args.values)
    if not values:
        raise ConfigError("sweep needs a non-empty --values list")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("sweep needs a non-empty --seeds list")
    rows = sweep(cfg, args.axis, values, seeds, args.out or cfg.out)
    for row in rows:
        print(row)
    return 0


def cmd_report(args) -> int:
    cfg = _load(args)
    out_dir = Path(cfg.out)
    summary_path = out_dir / "eval_summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"no run artifacts at {out_dir}")
    print(summary_path.read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detlab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and cache synthetic datasets")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train, evaluate, and write run artifacts")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid sweep over one axis, median over seeds")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=("lambda0", "ratio-pair", "sampling-mode"))
    p.add_argument("--values", required=True,
                   help="comma-separated; ratio pairs like 1:1+1:9")
    p.add_argument("--seeds", required=True, help="comma-separated integers")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="print the evaluation summary of a run")
    _add_common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
