"""Tail-window execution time and energy of the five scheduling schemes, per seed."""

import argparse
from pathlib import Path

from udec.config import ExperimentConfig
from udec.harness import export_csv, scheme_comparison


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--periods", type=int, default=3000)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    rows = []
    for seed in args.seeds:
        cfg = ExperimentConfig(seed=seed, periods=args.periods, caching="pscpp")
        for row in scheme_comparison(cfg):
            row = {"seed": seed, **row}
            rows.append(row)
            print(f"seed {seed} {row['scheduler']:8s} time {row['mean_time']:.3f} s  energy {row['mean_energy']:.4f} J",
                  flush=True)
    print("wrote", export_csv(rows, args.out / "schemes.csv"))


if __name__ == "__main__":
    main()
