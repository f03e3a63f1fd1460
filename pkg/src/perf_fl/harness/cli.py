"""Command-line entry point.

    perf-fl run --preset <name> [--override k=v]... [--out <dir>]
    perf-fl list-presets
    perf-fl validate <config.yaml>

The default output directory can be set with the PERF_FL_OUT environment
variable.
"""
from __future__ import annotations

import argparse
import os
import sys

from ..core import ConfigurationError, load_config
from .presets import PRESETS, get_preset
from .report import run_preset


def _parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} must look like key=value")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def _cmd_run(args) -> int:
    overrides = dict(_parse_override(item) for item in args.override or [])
    seeds = None
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    out_dir = args.out or os.environ.get("PERF_FL_OUT") or "results"
    report, _ = run_preset(args.preset, overrides=overrides or None,
                           out_dir=out_dir, seeds=seeds)
    print(f"wrote {out_dir}/{args.preset}/summary.csv")
    for row in report.rows:
        acc = "" if row.mean_accuracy is None else f"  acc={row.mean_accuracy:.4f}"
        print(f"  {row.sweep_param}={row.sweep_value:<10} {row.algorithm:<14}"
              f" loss={row.mean_final_loss:.6f} +/- {row.std_final_loss:.6f}{acc}")
    return 0


def _cmd_list(_args) -> int:
    width = max(len(name) for name in PRESETS)
    for name in sorted(PRESETS):
        preset = PRESETS[name]
        print(f"{name:<{width}}  {preset.description}")
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"{args.config}: valid {cfg.algorithm} config "
          f"(d={cfg.dim}, T={cfg.T}, N={cfg.num_clients}, seed={cfg.seed})")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="perf-fl",
        description="Performative federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment preset")
    p_run.add_argument("--preset", required=True, help="preset name (see list-presets)")
    p_run.add_argument("--override", action="append", metavar="K=V",
                       help="override a preset parameter (repeatable)")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--seeds", default=None, help="comma-separated seed list")
    p_run.set_defaults(func=_cmd_run)

    p_list = sub.add_parser("list-presets", help="list available presets")
    p_list.set_defaults(func=_cmd_list)

    p_val = sub.add_parser("validate", help="validate an experiment config file")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            get_preset(args.preset)  # fail fast with the preset list
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
