"""Exact propagation of first and second moments of (theta_n, Phi_n) on a finite chain.

All recursions handled here have the form theta_{n+1} = B_{n+1}(z') theta_n + c_{n+1}(z')
with z' = Phi_{n+1}, so conditioning on the chain state closes the moment
equations: for per-state moments p_n(z), m_n(z) = E[theta_n 1{Phi_n=z}] and
S_n(z) = E[theta_n theta_n^T 1{Phi_n=z}] one step costs O(S^2 d + S d^3).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import FiniteChain, stationary_dist
from .engine import LinearSAProblem, RandomLinearSAProblem
from .errors import BudgetExceededError

DEFAULT_BUDGET = 5e9


@dataclass(frozen=True)
class MomentState:
    step: int
    occupancy: np.ndarray
    m: np.ndarray
    S: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.m.sum(axis=0)

    @property
    def second_moment(self) -> np.ndarray:
        return self.S.sum(axis=0)

    @property
    def cov(self) -> np.ndarray:
        mu = self.mean
        return self.second_moment - np.outer(mu, mu)


@dataclass(frozen=True)
class OracleResult:
    checkpoints: np.ndarray
    mean: np.ndarray            # (K, d)
    cov: np.ndarray             # (K, d, d), centered
    second_moment: np.ndarray   # (K, d, d), E[theta theta^T]
    final: MomentState

    def at(self, n):
        k = int(np.searchsorted(self.checkpoints, n))
        if k >= len(self.checkpoints) or self.checkpoints[k] != n:
            raise KeyError(f"{n} is not a checkpoint")
        return k

    def projected(self, v) -> np.ndarray:
        """E|v^T theta_n|^2 = conj(v)^T E[theta theta^T] v for complex v."""
        v = np.asarray(v)
        return np.real(np.einsum("i,kij,j->k", np.conj(v), self.second_moment, v))

    def trace_cov(self) -> np.ndarray:
        return np.trace(self.cov, axis1=1, axis2=2)


def geometric_checkpoints(n_max: int, ratio: float = 2 ** 0.25, start: int = 1) -> np.ndarray:
    """Integers start, ~start*ratio, ~start*ratio^2, ..., always ending at n_max."""
    if n_max < start:
        return np.array([n_max], dtype=np.int64)
    count = int(np.floor(np.log(n_max / start) / np.log(ratio))) + 1
    pts = np.unique(np.round(start * ratio ** np.arange(count)).astype(np.int64))
    pts = pts[pts < n_max]
    return np.append(pts, n_max).astype(np.int64)


def _initial(chain, init_dist, theta0, d):
    S = chain.num_states
    if init_dist is None:
        p = stationary_dist(chain)
    elif np.ndim(init_dist) == 0:
        p = np.zeros(S)
        p[int(init_dist)] = 1.0
    else:
        p = np.asarray(init_dist, dtype=float)
        if p.shape != (S,) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("initial distribution must be a probability vector over the states")
    t0 = np.asarray(theta0, dtype=float).reshape(d)
    return p, p[:, None] * t0, p[:, None, None] * np.outer(t0, t0)


def _propagate(P, p, m, S2, horizon, checkpoints, coef, budget):
    """coef(n) -> (B, c): B of shape (d,d) or (S,d,d), c of shape (S,d)."""
    nS, d = m.shape
    if horizon * nS * (nS + d * d) * d > budget:
        raise BudgetExceededError(f"horizon {horizon} with S={nS}, d={d} exceeds budget {budget:g}")
    cps = np.asarray(checkpoints, dtype=np.int64)
    if cps.size and (np.any(np.diff(cps) <= 0) or cps[0] < 0 or cps[-1] > horizon):
        raise ValueError("checkpoints must be increasing within [0, horizon]")
    K = len(cps)
    means = np.empty((K, d))
    sec = np.empty((K, d, d))
    covs = np.empty((K, d, d))
    PT = np.ascontiguousarray(P.T)
    k = 0

    def record(n, m, S2):
        nonlocal k
        while k < K and cps[k] == n:
            mu = m.sum(0)
            means[k] = mu
            sec[k] = S2.sum(0)
            covs[k] = sec[k] - np.outer(mu, mu)
            k += 1

    record(0, m, S2)
    for n in range(horizon):
        B, c = coef(n)
        p = PT @ p
        mm = PT @ m                                              # sum_z P(z,z') m(z)
        ss = (PT @ S2.reshape(nS, d * d)).reshape(nS, d, d)      # sum_z P(z,z') S(z)
        BT = np.swapaxes(B, -1, -2)
        if B.ndim == 2:
            Bm = mm @ BT
        else:
            Bm = (B @ mm[:, :, None])[:, :, 0]
        cross = Bm[:, :, None] * c[:, None, :]
        S2 = B @ ss @ BT + cross + np.swapaxes(cross, 1, 2) + (p[:, None] * c)[:, :, None] * c[:, None, :]
        m = Bm + p[:, None] * c
        record(n + 1, m, S2)
    S2 = 0.5 * (S2 + np.swapaxes(S2, 1, 2))
    return OracleResult(cps, means, covs, sec, MomentState(horizon, p, m, S2))


def propagate_linear(chain: FiniteChain, problem: LinearSAProblem, horizon: int, checkpoints,
                     init_dist=None, theta0=None, budget: float = DEFAULT_BUDGET) -> OracleResult:
    """Exact law of the linear recursion; Phi_0 ~ init_dist (default: stationary)."""
    P = chain.transition
    d = problem.dim
    F = problem.noise
    if F.shape[0] != chain.num_states:
        raise ValueError("noise rows do not match the chain")
    t0 = problem.theta0 if theta0 is None else theta0
    p, m, S2 = _initial(chain, init_dist, t0, d)
    I = np.eye(d)
    g = problem.gain
    A = problem.A

    def coef(n):
        a = g / (n + 1)
        return I + a * A, a * F

    return _propagate(P, p, m, S2, horizon, checkpoints, coef, budget)


def propagate_random_linear(chain: FiniteChain, problem: RandomLinearSAProblem, horizon: int,
                            checkpoints, init_dist=None, theta0=None,
                            budget: float = DEFAULT_BUDGET) -> OracleResult:
    P = chain.transition
    d = problem.dim
    t0 = problem.theta0 if theta0 is None else theta0
    p, m, S2 = _initial(chain, init_dist, t0, d)
    I = np.eye(d)
    g = problem.gain
    Amap = problem.Amap
    drive = problem.noise

    def coef(n):
        a = g / (n + 1)
        return I[None] + a * Amap, a * drive

    return _propagate(P, p, m, S2, horizon, checkpoints, coef, budget)


def propagate_coupled(chain: FiniteChain, problem: RandomLinearSAProblem, horizon: int,
                      checkpoints, init_dist=None, budget: float = DEFAULT_BUDGET):
    """Joint law of (theta_circ, theta_bullet) on a common path.

    Returns (OracleResult for the stacked 2d vector, E||E_n||^2 per checkpoint).
    """
    P = chain.transition
    d = problem.dim
    t0 = np.concatenate([problem.theta0, problem.theta0])
    p, m, S2 = _initial(chain, init_dist, t0, 2 * d)
    I = np.eye(2 * d)
    g = problem.gain
    nS = chain.num_states
    Bfix = np.zeros((nS, 2 * d, 2 * d))
    Bfix[:, :d, :d] = problem.Amap
    Bfix[:, d:, d:] = problem.A
    drive = np.concatenate([problem.noise, problem.noise], axis=1)

    def coef(n):
        a = g / (n + 1)
        return I[None] + a * Bfix, a * drive

    res = _propagate(P, p, m, S2, horizon, checkpoints, coef, budget)
    K = np.hstack([np.eye(d), -np.eye(d)])
    err2 = np.einsum("ij,kjl,il->k", K, res.second_moment, K)
    return res, err2
