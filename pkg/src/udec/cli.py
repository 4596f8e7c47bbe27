"""Command-line entry point: ``python -m udec``.

Exit codes: 0 success, 1 configuration error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import CACHING_POLICIES, SCHEDULERS, ConfigError, ExperimentConfig, load
from .harness import (DENSITY_BUDGET_DEVICES, DENSITY_SCENARIO, RunAbort, density_sweep, export_csv, run_experiment,
                      scheme_comparison, write_run, zipf_sweep)

SWEEPS = ("density", "zipf", "schemes")
ZIPF_SKEWS = (0.0, 0.5, 1.0, 1.5, 2.0)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="udec", description="Two-timescale edge computing simulator")
    p.add_argument("--config", type=Path, help="experiment config file (key = value with sections)")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--periods", type=int, help="decision periods T")
    p.add_argument("--scheduler", choices=SCHEDULERS)
    p.add_argument("--caching", choices=CACHING_POLICIES)
    p.add_argument("--density", type=int, help="devices per server M")
    p.add_argument("--zipf", type=float, help="Zipf skew of service popularity")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--sweep", choices=SWEEPS, help="run a sweep instead of a single experiment")
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config else ExperimentConfig()
    changes = {}
    for flag, key in (("seed", "seed"), ("periods", "periods"), ("scheduler", "scheduler"),
                      ("caching", "caching"), ("density", "network.devices_per_server"),
                      ("zipf", "workload.zipf_skew")):
        value = getattr(args, flag)
        if value is not None:
            changes[key] = value
    if args.out is not None:
        changes["out"] = str(args.out)
    try:
        return cfg.replace(**changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(cfg.out)
    try:
        if args.sweep == "density":
            base = cfg.replace(**DENSITY_SCENARIO)
            rows = density_sweep(base, range(1, 11), budget_devices=DENSITY_BUDGET_DEVICES)
            path = export_csv(rows, out / "sweep_density.csv")
        elif args.sweep == "zipf":
            rows = zipf_sweep(cfg, ZIPF_SKEWS)
            path = export_csv(rows, out / "sweep_zipf.csv")
        elif args.sweep == "schemes":
            rows = scheme_comparison(cfg)
            path = export_csv(rows, out / "sweep_schemes.csv")
        else:
            summary = run_experiment(cfg)
            path = write_run(summary, cfg, out)
            print(f"mean time {summary.mean_time:.4f} s, mean energy {summary.mean_energy:.4f} J, "
                  f"hit probability {summary.hit_probability:.4f}")
    except (RunAbort, FloatingPointError, OSError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0
