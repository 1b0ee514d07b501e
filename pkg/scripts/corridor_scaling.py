"""Corridor ballot probabilities for an iid N(0,1) walk: m^{3/2} P across walk lengths and entropic-repulsion widths.

    python scripts/corridor_scaling.py --trials 1000000 --ells 1 2 3 4 6 8
"""
import argparse

from glx import ballot


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ms", type=int, nargs="+", default=[16, 32, 64, 128])
    ap.add_argument("--ells", type=int, nargs="+", default=[1, 2, 3, 4, 6, 8])
    ap.add_argument("--trials", type=int, default=10**6)
    ap.add_argument("--seed", type=int, default=70)
    ap.add_argument("--tol", type=float, default=0.15)
    args = ap.parse_args()

    table, best = ballot.ell_scan(args.ms, args.ells, args.trials, args.seed, args.tol)
    print("ell  " + "  ".join(f"m={m:<9d}" for m in args.ms) + "  spread  zero-hit")
    for ell, row in table.items():
        vals = "  ".join(f"{row['scaled'][m]:<11.4g}" for m in args.ms)
        print(f"{ell:<4d} {vals}  {row['spread']:<6.3f}  {row['zero_hit']}")
    print(f"smallest stable ell (spread < {args.tol}): {best}")


if __name__ == "__main__":
    main()
