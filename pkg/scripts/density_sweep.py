"""Mean execution time against devices per server (M = 1..10) in the contended-core scenario."""

import argparse
from pathlib import Path

from udec.config import ExperimentConfig
from udec.harness import DENSITY_BUDGET_DEVICES, DENSITY_SCENARIO, density_sweep, export_csv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--periods", type=int, default=3000)
    p.add_argument("--schedulers", nargs="+", default=["les", "ees", "2ts-drl"])
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    cfg = ExperimentConfig(seed=args.seed, periods=args.periods).replace(**DENSITY_SCENARIO)
    rows = density_sweep(cfg, range(1, 11), tuple(args.schedulers), budget_devices=DENSITY_BUDGET_DEVICES)
    for row in rows:
        print(f"{row['scheduler']:8s} M={row['devices']:2d} T={row['periods']:5d} time {row['mean_time']:.3f} s")
    print("wrote", export_csv(rows, args.out / "density.csv"))


if __name__ == "__main__":
    main()
