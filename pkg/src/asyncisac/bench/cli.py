"""Command-line entry point: ``asyncisac run|compare <config>`` and ``asyncisac demo ranging``."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .runner import compare_methods, demo_ranging_ambiguity, run

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="base seed override")
    p.add_argument("--trials", type=int, help="trial count override")
    p.add_argument("--workers", type=int, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asyncisac", description="Asynchronous ISAC sensing benchmarks")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a benchmark configuration")
    p_run.add_argument("config")
    _common(p_run)
    p_cmp = sub.add_parser("compare", help="run a configuration and rank its methods")
    p_cmp.add_argument("config")
    _common(p_cmp)
    p_demo = sub.add_parser("demo", help="built-in demonstrations")
    p_demo.add_argument("name", choices=["ranging"])
    p_demo.add_argument("--out", default=None)
    p_demo.add_argument("--seed", type=int, default=0)
    p_demo.add_argument("--trials", type=int, default=2000)
    return ap


def _load(args) -> dict:
    cfg = load_config(args.config)
    for key in ("seed", "trials", "workers"):
        val = getattr(args, key)
        if val is not None:
            if val < (0 if key == "seed" else 1):
                raise ConfigError(f"invalid override {val}", key)
            cfg[key] = val
    if args.out:
        cfg["output"] = args.out
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "demo":
            rows = demo_ranging_ambiguity(trials=args.trials, seed=args.seed, out_dir=args.out)
            print("stability_ppm  duration_s  bound_m  mc_max_m")
            for r in rows:
                print(f"{r['stability_ppm']:>13g}  {r['duration_s']:>10g}  {r['bound_m']:7.3f}  {r['mc_max_m']:8.3f}")
            return EXIT_OK
        cfg = _load(args)
        if args.command == "run":
            out = run(cfg)
            print(f"wrote reports to {out}")
        else:
            if len(cfg["methods"]) < 2:
                print("note: a single method gives a one-row ranking", file=sys.stderr)
            for r in compare_methods(cfg):
                print(f"{r['rank']:>2}  {r['method']:<28} std={r['std']:.6g}  rmse={r['rmse']:.6g}")
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
