"""Measured optimality gap of the P-L schedule against its bound, epoch by epoch.

Runs the constant-batch P-L schedule on a least-squares problem and prints,
every few epochs, the bound on E f(x_T) - f* next to the median and 90th
percentile of the measured gap over seeds.

    python3 scripts/pl_convergence.py --n 200 --d 4 --condition 2 --epsilon 1e-3
"""

import argparse

import numpy as np

from scsg import analysis
from scsg.optimizer import ScsgConfig, run_scsg, schedule_version3
from scsg.problems import make_least_squares
from scsg.sampling import RandomStream


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--d", type=int, default=4)
    ap.add_argument("--condition", type=float, default=2.0)
    ap.add_argument("--epsilon", type=float, default=1e-3)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--every", type=int, default=0, help="print interval in epochs (default: ~20 rows)")
    args = ap.parse_args()

    o = make_least_squares(RandomStream(5, ("script", "pl")), args.n, args.d, condition=args.condition)
    x0 = np.zeros(o.d)
    delta_f = o.value(x0) - o.f_star
    sched = schedule_version3(args.epsilon, o.h_star, o.L, o.mu, o.n)
    T = analysis.epochs_to_eps_pl(sched, args.epsilon, o.L, sched.gamma, o.mu, delta_f, o.h_star, o.n)
    print(f"L={o.L:.4g} mu={o.mu:.4g} H*={o.h_star:.4g} delta_f={delta_f:.4g} B={sched(1).B} epochs={T}")

    gaps = np.empty((args.seeds, T))
    for s in range(args.seeds):
        tr = run_scsg(o, ScsgConfig(sched, epochs=T, output_rule="last_iterate", seed=s, diagnostics=False), x0)
        for j, x in enumerate(tr.anchors):
            gaps[s, j] = o.value(x) - o.f_star

    every = args.every or max(1, T // 20)
    print(f"{'epoch':>6s} {'bound':>11s} {'median':>11s} {'p90':>11s}")
    for t in list(range(every, T, every)) + [T]:
        bound = analysis.bound_pl(sched, t, o.L, sched.gamma, o.mu, delta_f, o.h_star, o.n).value
        col = gaps[:, t - 1]
        print(f"{t:6d} {bound:11.3e} {np.median(col):11.3e} {np.quantile(col, 0.9):11.3e}")


if __name__ == "__main__":
    main()
