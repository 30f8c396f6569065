"""Upper/lower tail asymmetry of the M/M/1 running mean at finite n.

    python3 scripts/mm1_tails.py --trials 10000 --horizon 10000 --seed 7
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from markovsa.chain import QueueChain, mm1_stationary_mean
from markovsa.harness import EnsembleSpec, collect_samples, mcmc_experiment, tail_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arrival", type=float, default=1 / 3, help="p_a; load is p_a/(1-p_a)")
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--horizon", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--grid", type=float, nargs="+", default=[1.5, 2.0, 2.5, 3.0, 3.5],
                    help="thresholds in units of the sample standard deviation")
    ap.add_argument("--out", default="out/tails")
    args = ap.parse_args()

    q = QueueChain(args.arrival)
    exp = mcmc_experiment(q, lambda z: z.astype(float), [mm1_stationary_mean(q)])
    spec = EnsembleSpec(args.trials, args.horizon, [args.horizon], args.seed, exp)
    x = collect_samples(spec, args.threads)[0, :, 0]
    sd = x.std(ddof=1)
    rep = tail_report(x, sd * np.asarray(args.grid))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "tails.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "side", "count", "trials"])
        for e, lo, up in zip(rep.eps, rep.lower_exceed, rep.upper_exceed):
            w.writerow([format(e, ".17g"), "lower", lo, rep.trials])
            w.writerow([format(e, ".17g"), "upper", up, rep.trials])
    with open(out / "histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["left", "right", "count"])
        for a, b, c in zip(rep.hist_edges[:-1], rep.hist_edges[1:], rep.hist_counts):
            w.writerow([format(a, ".17g"), format(b, ".17g"), c])
    print(f"load {q.load:.4g}, n = {args.horizon}, sample sd {sd:.5f}, n*Var {args.horizon * sd ** 2:.4f}")
    print("eps/sd  lower  upper  ratio")
    for k, g in enumerate(args.grid):
        print(f"{g:6.2f} {rep.lower_exceed[k]:6d} {rep.upper_exceed[k]:6d} {rep.ratios()[k]:6.3g}")
    print("upper tail heavier at every threshold:", rep.upper_heavier())


if __name__ == "__main__":
    main()
