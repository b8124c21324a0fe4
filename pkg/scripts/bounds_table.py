"""Which method the complexity formulas favour over a grid of (epsilon, n).

Prints the favoured method from the order-of-magnitude rates and from the
explicit-constant SCSG/SVRG costs, for fixed delta_f, H* and L.

    python3 scripts/bounds_table.py --delta-f 1 --h-star 1
"""

import argparse

from scsg.cli import bounds_report


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--delta-f", type=float, default=1.0)
    ap.add_argument("--h-star", type=float, default=1.0)
    ap.add_argument("--L", type=float, default=1.0)
    args = ap.parse_args()

    eps_grid = [1.0, 0.1, 0.01, 1e-3, 1e-4]
    n_grid = [10**3, 10**5, 10**7]
    print(f"{'n':>10s} " + " ".join(f"{e:>22g}" for e in eps_grid))
    for n in n_grid:
        cells = []
        for eps in eps_grid:
            r = bounds_report({"epsilon": eps, "n": n, "delta_f": args.delta_f, "h_star": args.h_star,
                               "L": args.L})
            cells.append(f"{r['favored']['smooth']}/{r['favored_explicit']['smooth']}")
        print(f"{n:10d} " + " ".join(f"{c:>22s}" for c in cells))
    print("cells: favoured by rates / favoured by explicit costs")


if __name__ == "__main__":
    main()
