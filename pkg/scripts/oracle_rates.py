"""Exact covariance curves for the two-state chain across the three regimes.

Writes one CSV per A value with n, n*Var, n^2 (Var - Sigma_theta/n) and the
projected moment, then prints the theory next to the oracle limits.

    python3 scripts/oracle_rates.py --out out/rates --horizon 100000
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from markovsa.chain import FiniteChain
from markovsa.covtheory import predict
from markovsa.engine import LinearSAProblem
from markovsa.harness import fit_rate
from markovsa.oracle import geometric_checkpoints, propagate_linear
from markovsa.poisson import noise_stats


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/rates")
    ap.add_argument("--horizon", type=int, default=100_000)
    ap.add_argument("--A", type=float, nargs="+", default=[-2.0, -1.0, -0.3])
    ap.add_argument("--gain", type=float, default=1.0)
    args = ap.parse_args()

    chain = FiniteChain(np.array([[0.75, 0.25], [0.25, 0.75]]))
    f = np.array([1.0, -1.0])
    stats = noise_stats(chain, f)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cps = geometric_checkpoints(args.horizon)
    print(f"Sigma_Delta = {stats.sigma_delta[0, 0]:.12g}")
    for a in args.A:
        pred = predict(a, stats, args.gain)
        res = propagate_linear(chain, LinearSAProblem(a, f, args.gain), args.horizon, cps)
        var = res.cov[:, 0, 0]
        proj = res.projected(pred.eigen.leading_left_eigenvector)
        path = out / f"oracle_A{a:+.3g}_g{args.gain:.3g}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "n_var", "second_order", "projected"])
            for k, n in enumerate(cps):
                sec = n * n * (var[k] - pred.sigma_theta[0, 0] / n) if pred.sigma_theta is not None else ""
                w.writerow([int(n), format(n * var[k], ".17g"), sec if sec == "" else format(sec, ".17g"),
                            format(proj[k], ".17g")])
        if pred.sigma_theta is None:
            fit = fit_rate(cps, proj, (args.horizon / 100, args.horizon))
            print(f"A={a}: degraded, predicted exponent {-pred.rate_exponent:.4f}, "
                  f"oracle fit {fit.exponent:.4f} -> {path}")
        else:
            line = f"A={a}: Sigma_theta {pred.sigma_theta[0, 0]:.8g}, oracle n*Var {args.horizon * var[-1]:.8g}"
            if pred.sigma_theta_2 is not None:
                n = args.horizon
                line += (f"; Sigma_theta2 {pred.sigma_theta_2[0, 0]:.8g}, "
                         f"oracle {n * n * (var[-1] - pred.sigma_theta[0, 0] / n):.8g}")
            print(line + f" -> {path}")


if __name__ == "__main__":
    main()
