"""Seeded Monte Carlo ensembles, jackknife moments, rate fits and tail counts."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .chain import FiniteChain, QueueChain, sample_paths, stationary_dist
from .covtheory import CovariancePrediction, predicted_covariance
from .engine import (LinearSAProblem, RandomLinearSAProblem, TDProblem, run_coupled,
                     run_linear_sa, run_mcmc_average, run_random_linear_sa, run_td0,
                     td_matrices)

DEFAULT_BLOCK = 500


def trial_seed(master_seed: int, trial: int) -> np.random.SeedSequence:
    """Independent stream for one trial: SeedSequence(master, spawn_key=(trial,)).

    SeedSequence hashing is specified bit-exactly by numpy, so the derived
    streams do not depend on platform, thread count or block size.
    """
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(trial),))


@dataclass(frozen=True)
class Experiment:
    """What one trial does: sample a path from ``model`` and reduce it.

    ``run(paths, checkpoints)`` receives a (T, N+1) block of paths and
    returns values of shape (K, T, d).
    """

    model: FiniteChain | QueueChain
    run: Callable[[np.ndarray, np.ndarray], np.ndarray]
    initial: object = 0
    name: str = ""


@dataclass(frozen=True)
class EnsembleSpec:
    trials: int
    horizon: int
    checkpoints: np.ndarray
    master_seed: int
    experiment: Experiment
    block_size: int = DEFAULT_BLOCK
    forced_seeds: tuple | None = None

    def __post_init__(self):
        cps = np.asarray(self.checkpoints, dtype=np.int64)
        if self.trials < 2:
            raise ValueError("an ensemble needs at least 2 trials")
        if cps.size == 0 or cps.max() > self.horizon or np.any(np.diff(cps) <= 0):
            raise ValueError("checkpoints must be increasing and <= horizon")
        if self.forced_seeds is not None and len(self.forced_seeds) != self.trials:
            raise ValueError("forced_seeds must list one seed per trial")
        object.__setattr__(self, "checkpoints", cps)

    def seeds(self, start: int, stop: int):
        if self.forced_seeds is not None:
            return [np.random.SeedSequence(int(s)) for s in self.forced_seeds[start:stop]]
        return [trial_seed(self.master_seed, t) for t in range(start, stop)]


@dataclass(frozen=True)
class EmpiricalMoments:
    checkpoints: np.ndarray
    trials: int
    mean: np.ndarray           # (K, d)
    mean_se: np.ndarray
    cov: np.ndarray            # (K, d, d), ddof=1
    cov_se: np.ndarray
    trace_cov: np.ndarray      # (K,)
    trace_cov_se: np.ndarray
    sq_norm: np.ndarray        # (K,) sample mean of ||x||^2
    sq_norm_se: np.ndarray
    samples: np.ndarray | None = None


def _jackknife_cov(x):
    """Leave-one-out covariances of x (N, d): returns (cov, se, trace, trace_se)."""
    N = x.shape[0]
    # shift by a sample first: identical rows then give exactly zero
    xc = x - x[0]
    xc = xc - xc.mean(axis=0)
    s1 = xc.sum(axis=0)
    s2 = xc.T @ xc
    cov = s2 / (N - 1)
    loo_mean = (s1[None, :] - xc) / (N - 1)
    loo_s2 = s2[None] - xc[:, :, None] * xc[:, None, :]
    loo_cov = (loo_s2 - (N - 1) * loo_mean[:, :, None] * loo_mean[:, None, :]) / (N - 2)
    dev = loo_cov - loo_cov.mean(axis=0)
    se = np.sqrt((N - 1) / N * (dev ** 2).sum(axis=0))
    tr = np.trace(loo_cov, axis1=1, axis2=2)
    tr_se = np.sqrt((N - 1) / N * ((tr - tr.mean()) ** 2).sum())
    return cov, se, float(np.trace(cov)), float(tr_se)


def moments_from_samples(checkpoints, samples, keep=False) -> EmpiricalMoments:
    """Jackknife-over-trials moments from samples of shape (K, T, d)."""
    K, T, d = samples.shape
    if T < 3:
        raise ValueError("jackknife standard errors need at least 3 trials")
    mean = samples.mean(axis=1)
    mean_se = samples.std(axis=1, ddof=1) / np.sqrt(T)
    cov = np.empty((K, d, d))
    cov_se = np.empty((K, d, d))
    tr = np.empty(K)
    tr_se = np.empty(K)
    for k in range(K):
        cov[k], cov_se[k], tr[k], tr_se[k] = _jackknife_cov(samples[k])
    sq = (samples ** 2).sum(axis=2)
    return EmpiricalMoments(
        np.asarray(checkpoints), T, mean, mean_se, cov, cov_se, tr, tr_se,
        sq.mean(axis=1), sq.std(axis=1, ddof=1) / np.sqrt(T), samples if keep else None,
    )


def collect_samples(spec: EnsembleSpec, threads: int | None = None) -> np.ndarray:
    """Per-trial checkpoint values, shape (K, trials, d), in trial-index order."""
    exp = spec.experiment
    blocks = [(s, min(s + spec.block_size, spec.trials))
              for s in range(0, spec.trials, spec.block_size)]

    def work(bounds):
        lo, hi = bounds
        paths = sample_paths(exp.model, spec.seeds(lo, hi), spec.horizon, exp.initial)
        return np.asarray(exp.run(paths, spec.checkpoints), dtype=float)

    threads = threads or os.cpu_count() or 1
    if threads == 1 or len(blocks) == 1:
        parts = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    return np.concatenate(parts, axis=1)


def run_ensemble(spec: EnsembleSpec, threads: int | None = None, keep_samples: bool = False
                 ) -> EmpiricalMoments:
    samples = collect_samples(spec, threads)
    return moments_from_samples(spec.checkpoints, samples, keep_samples)


# ------------------------------------------------------------- experiments


def _stationary_initial(model):
    if isinstance(model, QueueChain):
        levels = np.arange(model.analysis_truncation + 1)
        w = model.load ** levels
        return w / w.sum()
    return stationary_dist(model)


def linear_sa_experiment(chain: FiniteChain, problem: LinearSAProblem, initial=None) -> Experiment:
    def run(paths, cps):
        return run_linear_sa(problem, paths, cps).values
    init = _stationary_initial(chain) if initial is None else initial
    return Experiment(chain, run, init, "linear_sa")


def mcmc_experiment(model, F, theta_star=None, initial=None) -> Experiment:
    def run(paths, cps):
        return run_mcmc_average(model, F, paths, cps, theta_star).values
    init = _stationary_initial(model) if initial is None else initial
    return Experiment(model, run, init, "mcmc")


def random_linear_experiment(chain: FiniteChain, problem: RandomLinearSAProblem,
                             initial=None) -> Experiment:
    def run(paths, cps):
        return run_random_linear_sa(problem, paths, cps).values
    init = _stationary_initial(chain) if initial is None else initial
    return Experiment(chain, run, init, "random_linear_sa")


def coupling_experiment(chain: FiniteChain, problem: RandomLinearSAProblem,
                        initial=None) -> Experiment:
    """Per-trial coupling error E_n = theta_circ_n - theta_bullet_n."""
    def run(paths, cps):
        return run_coupled(problem, paths, cps).err
    init = _stationary_initial(chain) if initial is None else initial
    return Experiment(chain, run, init, "coupling")


def td_experiment(problem: TDProblem, gain=1.0, theta0=None, initial=None) -> Experiment:
    ts = td_matrices(problem).theta_star

    def run(paths, cps):
        return run_td0(problem, paths, cps, theta0=theta0, gain=gain, theta_star=ts).values
    init = _stationary_initial(problem.state_chain) if initial is None else initial
    return Experiment(problem.state_chain, run, init, "td0")


# -------------------------------------------------------------- analysis


@dataclass(frozen=True)
class RateFit:
    exponent: float
    intercept: float
    window: tuple
    r_squared: float
    points: int


def fit_rate(checkpoints, values, window=None) -> RateFit:
    """Least-squares slope of log(value) against log(n) inside ``window``.

    The default window is the last two decades of checkpoints.
    """
    n = np.asarray(checkpoints, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is None:
        window = (n.max() / 100.0, n.max())
    lo, hi = window
    sel = (n >= lo) & (n <= hi)
    if sel.sum() < 3:
        raise ValueError(f"need at least 3 points in window {window}, got {int(sel.sum())}")
    if np.any(v[sel] <= 0):
        raise ValueError("values in the fit window must be positive")
    x, y = np.log(n[sel]), np.log(v[sel])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    sst = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 if sst == 0 else float(np.clip(1.0 - (resid ** 2).sum() / sst, 0.0, 1.0))
    return RateFit(float(slope), float(intercept), (float(lo), float(hi)), r2, int(sel.sum()))


@dataclass(frozen=True)
class TailReport:
    eps: np.ndarray
    lower_exceed: np.ndarray
    upper_exceed: np.ndarray
    trials: int
    hist_counts: np.ndarray
    hist_edges: np.ndarray

    def ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.lower_exceed > 0,
                            self.upper_exceed / np.maximum(self.lower_exceed, 1), np.inf)

    def upper_heavier(self) -> bool:
        """Upper tail exceeds lower at every eps, with a non-decreasing ratio."""
        r = self.ratios()
        # elementwise comparison keeps inf >= inf true where diff would give nan
        return bool(np.all(self.upper_exceed > self.lower_exceed) and np.all(r[1:] >= r[:-1]))


def tail_report(samples, eps_grid, bins: int = 50) -> TailReport:
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 100:
        raise ValueError("tail_report needs at least 100 samples")
    eps = np.asarray(eps_grid, dtype=float)
    lower = (x[None, :] <= -eps[:, None]).sum(axis=1)
    upper = (x[None, :] >= eps[:, None]).sum(axis=1)
    counts, edges = np.histogram(x, bins=bins)
    return TailReport(eps, lower, upper, x.size, counts, edges)


@dataclass(frozen=True)
class Comparison:
    checkpoints: np.ndarray
    z: np.ndarray          # (K, d, d) entrywise z-scores on n*Cov
    z_trace: np.ndarray    # (K,)
    z_max: float

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z) <= self.z_max) and np.all(np.abs(self.z_trace) <= self.z_max))

    @property
    def worst(self) -> float:
        return float(max(np.abs(self.z).max(), np.abs(self.z_trace).max()))


def _zscore(diff, se):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff == 0, 0.0, np.inf))
    return z


def _compare(emp: EmpiricalMoments, targets: np.ndarray, sel, z_max) -> Comparison:
    # z on n*Cov equals z on Cov: the factor n cancels
    cov = emp.cov[sel]
    z = _zscore(cov - targets, emp.cov_se[sel])
    zt = _zscore(emp.trace_cov[sel] - np.trace(targets, axis1=1, axis2=2), emp.trace_cov_se[sel])
    return Comparison(emp.checkpoints[sel], z, zt, z_max)


def compare_to_theory(emp: EmpiricalMoments, pred: CovariancePrediction, z_max: float = 4.0
                      ) -> Comparison:
    if pred.sigma_theta is None:
        raise ValueError("degraded-rate prediction carries no covariance to compare against")
    if emp.cov.shape[1:] != pred.sigma_theta.shape:
        raise ValueError("dimension mismatch between empirical moments and prediction")
    sel = emp.checkpoints >= 1
    targets = np.stack([predicted_covariance(pred, int(n)) for n in emp.checkpoints[sel]])
    return _compare(emp, targets, sel, z_max)


def compare_to_oracle(emp: EmpiricalMoments, oracle, z_max: float = 4.0) -> Comparison:
    common, ie, io = np.intersect1d(emp.checkpoints, oracle.checkpoints, return_indices=True)
    sel = np.zeros(len(emp.checkpoints), bool)
    sel[ie] = True
    sel &= emp.checkpoints >= 1
    order = {n: i for n, i in zip(common, io)}
    targets = np.stack([oracle.cov[order[n]] for n in emp.checkpoints[sel]])
    return _compare(emp, targets, sel, z_max)
