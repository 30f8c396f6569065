"""Mean-square coupling error between random-matrix SA and its linearization.

    python3 scripts/coupling_rate.py --amap -2.5 -1.5 --trials 10000
"""
import argparse

import numpy as np

from markovsa.chain import FiniteChain
from markovsa.covtheory import eigen_report
from markovsa.engine import random_linear_problem
from markovsa.harness import EnsembleSpec, collect_samples, coupling_experiment, fit_rate
from markovsa.oracle import geometric_checkpoints, propagate_coupled


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--amap", type=float, nargs=2, default=[-2.5, -1.5])
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--horizon", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=99)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    chain = FiniteChain(np.array([[0.75, 0.25], [0.25, 0.75]]))
    amap = np.array(args.amap)
    # theta* = 1 with noise (1, -1) on the two states
    prob = random_linear_problem(chain, amap, amap - np.array([1.0, -1.0]))
    rho0 = eigen_report(prob.A).rho0
    cps = geometric_checkpoints(args.horizon, start=10)
    _, exact = propagate_coupled(chain, prob, args.horizon, cps)
    s = collect_samples(EnsembleSpec(args.trials, args.horizon, cps, args.seed,
                                     coupling_experiment(chain, prob)), args.threads)
    emp = (s ** 2).sum(axis=2).mean(axis=1)
    window = (args.horizon / 10, args.horizon)
    bound = -2.0 if rho0 > 1 else -2.0 * rho0
    print(f"A = {prob.A[0, 0]:.4g}, rho0 = {rho0:.4g}, predicted exponent <= {bound:.3g}")
    print(f"oracle fit    {fit_rate(cps, exact, window).exponent:.4f}")
    print(f"ensemble fit  {fit_rate(cps, emp, window).exponent:.4f}")
    print("n, E|err|^2 exact, ensemble")
    for n, a, b in zip(cps[::4], exact[::4], emp[::4]):
        print(f"{n:7d} {a:.6e} {b:.6e}")


if __name__ == "__main__":
    main()
