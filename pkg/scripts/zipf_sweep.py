"""Cache hit probability against Zipf skew for PSCPP, federated and centralized caching."""

import argparse
from pathlib import Path

from udec.config import ExperimentConfig
from udec.harness import export_csv, zipf_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--periods", type=int, default=3000)
    p.add_argument("--skews", type=float, nargs="+", default=[0.0, 0.5, 1.0, 1.5, 2.0])
    p.add_argument("--scheduler", default="ees", help="fast-tier scheduler used while caching is learned")
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    cfg = ExperimentConfig(seed=args.seed, periods=args.periods, scheduler=args.scheduler)
    rows = zipf_sweep(cfg, args.skews)
    for row in rows:
        print(f"{row['caching']:12s} skew {row['zipf_skew']:.1f} hit {row['hit_probability']:.4f}")
    print("wrote", export_csv(rows, args.out / "zipf.csv"))


if __name__ == "__main__":
    main()
