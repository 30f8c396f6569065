"""TD(0), its random-linear error form, and SNR against LSTD on one path.

    python3 scripts/td_snr.py --discount 0.5 --horizon 5000
"""
import argparse

import numpy as np

from markovsa.chain import ChainSampler, FiniteChain, sample_path
from markovsa.covtheory import eigen_report, predict
from markovsa.engine import TDProblem, run_snr_lstd, run_td0, run_td0_error_form, td_matrices
from markovsa.oracle import geometric_checkpoints
from markovsa.poisson import noise_stats


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--discount", type=float, default=0.5)
    ap.add_argument("--horizon", type=int, default=5000)
    ap.add_argument("--gain", type=float, default=2.0)
    ap.add_argument("--snr-gain", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    X = FiniteChain(np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]]))
    prob = TDProblem(X, np.array([1.0, 0.0, 2.0]), args.discount,
                     np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    mats = td_matrices(prob)
    rep = eigen_report(mats.A)
    print("A =", mats.A.round(6).tolist(), " theta* =", mats.theta_star.round(6).tolist())
    print(f"eigenvalues {np.round(rep.eigenvalues, 6)}, half condition {rep.half_condition}")
    stats = noise_stats(mats.pair_chain, mats.random_linear().noise)
    pred = predict(mats.A, stats, args.gain)
    if pred.sigma_theta is not None:
        print(f"Sigma_theta at g={args.gain}:", pred.sigma_theta.round(6).tolist())

    x = sample_path(ChainSampler(X, args.seed, 0), args.horizon)
    cps = geometric_checkpoints(args.horizon, ratio=10 ** 0.5)
    a = run_td0(prob, x, cps, gain=args.gain)
    b = run_td0_error_form(mats, x, cps, gain=args.gain)
    print(f"TD(0) vs error form: max gap {np.abs(a.values - b.values).max():.3e}")
    s = run_snr_lstd(prob, x, cps, gain=args.snr_gain)
    print(f"SNR vs LSTD: relative gap {s.equivalence_gap():.3e}, ridged steps {len(s.ridged_steps)}")
    print("n, |TD error|, |SNR error|")
    for k, n in enumerate(cps):
        print(f"{n:6d} {np.linalg.norm(a.values[k]):.5f} {np.linalg.norm(s.snr.values[k]):.5f}")


if __name__ == "__main__":
    main()
