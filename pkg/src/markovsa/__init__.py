"""Finite-n covariance theory and simulation for linear stochastic approximation
driven by Markovian noise."""
from .chain import (ChainSampler, FiniteChain, QueueChain, ergodicity_check, sample_path,
                    sample_paths, stationary_dist)
from .covtheory import (eigen_report, optimal_scalar_gain, predict, sigma_theta, sigma_theta_2,
                        sigma_theta_gain, solve_lyapunov)
from .engine import (LinearSAProblem, TDProblem, random_linear_problem, run_linear_sa,
                     run_mcmc_average, run_random_linear_sa, run_snr_lstd, run_td0)
from .oracle import geometric_checkpoints, propagate_coupled, propagate_linear, propagate_random_linear
from .poisson import noise_stats, solve_poisson

__version__ = "0.1.0"
