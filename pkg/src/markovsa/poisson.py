"""Poisson equations for finite chains and the stationary noise statistics built on them.

State functions are plain arrays of shape (S, d): one row per state.  A 1-D
array of length S is accepted everywhere and treated as d = 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import FiniteChain, QueueChain, require_ergodic, stationary_dist
from .errors import ErgodicityError, TruncationError

RESIDUAL_TOL = 1e-10


def as_state_function(f, num_states: int | None = None) -> np.ndarray:
    F = np.asarray(f, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim != 2 or F.shape[1] < 1:
        raise ValueError(f"state function must have shape (S, d), got {F.shape}")
    if num_states is not None and F.shape[0] != num_states:
        raise ValueError(f"state function has {F.shape[0]} rows, chain has {num_states} states")
    if not np.all(np.isfinite(F)):
        raise ValueError("state function has non-finite entries")
    return F


@dataclass(frozen=True)
class PoissonSolution:
    fhat: np.ndarray
    residual_norm: float
    mean_norm: float
    truncation_error: float = 0.0


@dataclass(frozen=True)
class NoiseStats:
    """Stationary second-order statistics of the noise f*(Phi).

    ``cross_m_mhat`` is E_pi[dM_hat dM^T] and ``cross_m_zhat`` is
    E_pi[dM Zhat^T], both pairing quantities on the same transition z -> z'
    with Zhat = fhathat(z').
    """

    sigma_delta: np.ndarray
    sigma_z: np.ndarray
    cross_m_mhat: np.ndarray
    cross_m_zhat: np.ndarray
    first: PoissonSolution
    second: PoissonSolution
    pi: np.ndarray

    def scaled(self, g: float) -> "NoiseStats":
        """Statistics of g * f* (every entry is quadratic in the noise)."""
        g2 = g * g
        return NoiseStats(
            self.sigma_delta * g2, self.sigma_z * g2, self.cross_m_mhat * g2,
            self.cross_m_zhat * g2,
            PoissonSolution(self.first.fhat * g, self.first.residual_norm, self.first.mean_norm),
            PoissonSolution(self.second.fhat * g, self.second.residual_norm, self.second.mean_norm),
            self.pi,
        )


def center(f, pi) -> np.ndarray:
    F = as_state_function(f)
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (F.shape[0],):
        raise ValueError(f"distribution of length {pi.shape} does not match {F.shape[0]} states")
    return F - pi @ F


def _poisson_residual(P, fhat, ftilde):
    return float(np.abs(fhat - P @ fhat - ftilde).max())


def _solve_fundamental(P, pi, ftilde):
    S = P.shape[0]
    Z = np.eye(S) - P + np.outer(np.ones(S), pi)
    try:
        fhat = np.linalg.solve(Z, ftilde)
    except np.linalg.LinAlgError as exc:
        raise ErgodicityError(f"fundamental matrix is singular: {exc}") from exc
    # a refinement step; the system is well posed but can be badly scaled
    fhat = fhat + np.linalg.solve(Z, ftilde - Z @ fhat)
    return fhat - pi @ fhat


def solve_poisson(chain: FiniteChain, ftilde, pi=None) -> PoissonSolution:
    """Zero-mean solution of fhat - P fhat = ftilde via (I - P + 1 pi^T)^-1."""
    require_ergodic(chain)
    P = chain.transition
    if pi is None:
        pi = stationary_dist(chain)
    F = as_state_function(ftilde, chain.num_states)
    scale = max(1.0, float(np.abs(F).max()))
    mean = np.abs(pi @ F).max()
    if mean > RESIDUAL_TOL * scale:
        raise ValueError(f"right-hand side is not centered: |pi(f)| = {mean:.3g}")
    fhat = _solve_fundamental(P, pi, F)
    return PoissonSolution(fhat, _poisson_residual(P, fhat, F), float(np.abs(pi @ fhat).max()))


def solve_second_poisson(chain: FiniteChain, first: PoissonSolution, pi=None) -> PoissonSolution:
    """Zero-mean fhathat with fhathat - P fhathat = fhat."""
    return solve_poisson(chain, first.fhat, pi)


def _tail_bound(rho, N, a, b):
    # sum_{z>N} (1-rho) rho^z (a + b (z - N))
    return rho ** (N + 1) * (a + b / (1.0 - rho))


def mm1_solve_poisson(queue: QueueChain, f, tail_tol: float = 1e-12,
                      level: int | None = None) -> PoissonSolution:
    """Poisson solution for the M/M/1 queue on the finite section 0..N.

    ``f`` is either a callable of integer levels or an array of values on
    0..N.  It is centered under the truncated (reflecting) invariant law.
    The truncation error is estimated as the stationary mass above N
    weighted by a linear extrapolation of |f|, and must not exceed
    ``tail_tol``.
    """
    N = queue.analysis_truncation if level is None else level
    levels = np.arange(N + 1)
    vals = as_state_function(f(levels) if callable(f) else f, N + 1)
    rho = queue.load
    a = np.abs(vals[-1]).max()
    b = np.abs(vals[-1] - vals[-2]).max() if N >= 1 else a
    err = _tail_bound(rho, N, a, b)
    if err > tail_tol:
        required = N
        while _tail_bound(rho, required, a + b * (required - N), b) > tail_tol:
            required += 1
            if required > 100 * (N + 1) + 10_000:
                break
        raise TruncationError(
            f"truncation at N={N} leaves estimated error {err:.3g} > {tail_tol:.3g}; "
            f"need N >= {required}", required,
        )
    chain = queue.truncated(N)
    pi = (1.0 - rho) * rho ** levels
    pi = pi / pi.sum()
    sol = solve_poisson(chain, center(vals, pi), pi)
    return PoissonSolution(sol.fhat, sol.residual_norm, sol.mean_norm, err)


def martingale_increments(chain: FiniteChain, h) -> np.ndarray:
    """dM(z -> z') = h(z') - (P h)(z), shape (S, S, d)."""
    H = as_state_function(h, chain.num_states)
    return H[None, :, :] - (chain.transition @ H)[:, None, :]


def noise_stats(chain: FiniteChain, fstar) -> NoiseStats:
    pi = stationary_dist(chain)
    ftilde = center(as_state_function(fstar, chain.num_states), pi)
    first = solve_poisson(chain, ftilde, pi)
    second = solve_poisson(chain, first.fhat, pi)
    P = chain.transition
    W = pi[:, None] * P
    dm = martingale_increments(chain, first.fhat)
    dmh = martingale_increments(chain, second.fhat)
    fhh = second.fhat
    sigma_delta = np.einsum("ab,abi,abj->ij", W, dm, dm)
    sigma_z = np.einsum("a,ai,aj->ij", pi, first.fhat, first.fhat)
    cross_m_mhat = np.einsum("ab,abi,abj->ij", W, dmh, dm)
    cross_m_zhat = np.einsum("ab,abi,bj->ij", W, dm, fhh)
    sym = lambda M: 0.5 * (M + M.T)
    return NoiseStats(sym(sigma_delta), sym(sigma_z), cross_m_mhat, cross_m_zhat,
                      first, second, pi)


def sigma_delta_sum(chain: FiniteChain, fstar, lag_cut: int) -> np.ndarray:
    """Truncated autocovariance sum C_0 + sum_{k=1}^K (C_k + C_k^T)."""
    pi = stationary_dist(chain)
    F = center(as_state_function(fstar, chain.num_states), pi)
    P = chain.transition
    weighted = pi[:, None] * F
    total = weighted.T @ F
    PkF = F
    for _ in range(lag_cut):
        PkF = P @ PkF
        Ck = weighted.T @ PkF
        total = total + Ck + Ck.T
    return total
