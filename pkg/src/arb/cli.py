"""Command-line entry point: gen-data, run, sweep, plot."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .core import Rng, Tier, dataset_save
from .envs import TierSpec, generate_dataset, make_env
from .harness import config_overrides, parse_config, run, sweep
from .plotting import plot


def _cmd_gen_data(args) -> int:
    env = make_env(args.env)
    spec = TierSpec(Tier(args.tier), args.episodes)
    ds = generate_dataset(env, spec, Rng(args.seed))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    dataset_save(ds, args.out)
    print(f"wrote {len(ds)} transitions / {len(ds.trajectories)} episodes "
          f"(mean return {ds.mean_episode_return():.2f}) to {args.out}")
    return 0


def _apply_overrides(cfg, args):
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    return config_overrides(cfg, **overrides) if overrides else cfg


def _cmd_run(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    results = run(cfg)
    for metrics in results:
        print(f"seed {metrics.seed}: final score {metrics.final_score:.1f}, "
              f"{metrics.total_updates} updates, {metrics.reweight_passes} re-weight passes")
    print(f"metrics written under {cfg.out_dir}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    param, _, raw_values = args.axis.partition("=")
    values = [v for v in raw_values.split(",") if v]
    if not param or not values:
        print("--axis must look like key=v1,v2,...", file=sys.stderr)
        return 2
    results = sweep(cfg, param, values)
    failed = [v for v, cell in results.items() if isinstance(cell, Exception)]
    for value, cell in results.items():
        if isinstance(cell, Exception):
            print(f"{param}={value}: FAILED ({cell})")
        else:
            scores = ", ".join(f"{m.final_score:.1f}" for m in cell)
            print(f"{param}={value}: final scores [{scores}]")
    print(f"summary written to {Path(cfg.out_dir) / 'sweep.csv'}")
    return 1 if failed else 0


def _cmd_plot(args) -> int:
    written = plot(args.csvs, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arb",
                                     description="On-policyness-weighted replay experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a tiered offline dataset")
    p.add_argument("env", choices=["pointmass", "pendulum"])
    p.add_argument("tier", choices=[t.value for t in Tier if t is not Tier.CUSTOM])
    p.add_argument("out")
    p.add_argument("--episodes", type=int, default=207)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("run", help="run a config over its seeds")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="run this single seed instead")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("sweep", help="run one axis of configs")
    p.add_argument("config")
    p.add_argument("--axis", required=True, help="key=v1,v2,...")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("plot", help="render metrics CSVs to figures")
    p.add_argument("csvs", nargs="+")
    p.add_argument("out")
    p.set_defaults(fn=_cmd_plot)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
