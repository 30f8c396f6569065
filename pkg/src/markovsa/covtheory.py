"""Eigen-structure of A and the Lyapunov-equation covariance predictions."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (ConditioningWarning, FinerBoundUnavailable, RateDegenerateError,
                     StabilityError)
from .poisson import NoiseStats

HURWITZ_TOL = 1e-9
SIGMA_V_TOL = 1e-8


def as_matrix(A) -> np.ndarray:
    M = np.atleast_2d(np.asarray(A, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def is_hurwitz(M, margin: float = 0.0) -> bool:
    """All eigenvalues of M satisfy Re < -margin, with a 1e-9 rejection band."""
    return bool(np.linalg.eigvals(as_matrix(M)).real.max() < -margin - HURWITZ_TOL)


def solve_lyapunov(M, Q) -> np.ndarray:
    """Solve M X + X M^T + Q = 0 through the vectorized d^2 x d^2 system."""
    M = as_matrix(M)
    Q = as_matrix(Q)
    d = M.shape[0]
    if Q.shape != (d, d):
        raise ValueError(f"Q has shape {Q.shape}, expected {(d, d)}")
    if not np.allclose(Q, Q.T, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError("Q must be symmetric")
    if not is_hurwitz(M):
        raise StabilityError(f"M is not Hurwitz: eigenvalues {np.linalg.eigvals(M)}")
    I = np.eye(d)
    # column-major vec: vec(M X) = (I kron M) vec X, vec(X M^T) = (M kron I) vec X
    K = np.kron(I, M) + np.kron(M, I)
    cond = np.linalg.cond(K)
    if cond > 1e12:
        warnings.warn(f"Lyapunov system condition number {cond:.3g}", ConditioningWarning)
    x = np.linalg.solve(K, -Q.reshape(-1, order="F"))
    X = x.reshape(d, d, order="F")
    return 0.5 * (X + X.T)


def lyapunov_residual(M, X, Q) -> float:
    M, X, Q = as_matrix(M), as_matrix(X), as_matrix(Q)
    return float(np.linalg.norm(M @ X + X @ M.T + Q))


@dataclass(frozen=True)
class EigenReport:
    eigenvalues: np.ndarray
    rho0: float
    leading_eigenvalue: complex
    leading_left_eigenvector: np.ndarray
    half_condition: bool
    one_condition: bool
    sigma_v_nonzero: bool

    @property
    def rate_exponent(self) -> float:
        return 1.0 if self.half_condition else 2.0 * self.rho0


def _normalize_phase(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    # largest-modulus entry; ties (common for complex pairs) go to the first index
    mod = np.abs(v)
    k = int(np.flatnonzero(mod >= mod.max() * (1 - 1e-9))[0])
    v = v * (abs(v[k]) / v[k])
    v[k] = abs(v[k])
    return v


def eigen_report(A, sigma_delta=None, sigma_v_tol: float = SIGMA_V_TOL) -> EigenReport:
    A = as_matrix(A)
    lam = np.linalg.eigvals(A)
    if not is_hurwitz(A):
        raise StabilityError(f"A is not Hurwitz: eigenvalues {lam}")
    rho0 = float(-lam.real.max())
    # left eigenvectors of A are right eigenvectors of A^T (no conjugation)
    w, V = np.linalg.eig(A.T)
    top = np.flatnonzero(np.isclose(w.real, w.real.max(), rtol=0, atol=1e-12))
    k = top[np.argmax(w[top].imag)]
    v = _normalize_phase(V[:, k].astype(complex))
    if sigma_delta is None:
        nonzero = True
    else:
        SD = as_matrix(sigma_delta)
        scale = np.linalg.norm(SD)
        nonzero = bool(scale > 0 and np.linalg.norm(SD @ v) > sigma_v_tol * scale)
    return EigenReport(
        eigenvalues=lam,
        rho0=rho0,
        leading_eigenvalue=complex(w[k]),
        leading_left_eigenvector=v,
        half_condition=bool(lam.real.max() < -0.5 - HURWITZ_TOL),
        one_condition=bool(lam.real.max() < -1.0 - HURWITZ_TOL),
        sigma_v_nonzero=nonzero,
    )


def sigma_theta(A, sigma_delta) -> np.ndarray:
    A = as_matrix(A)
    M = 0.5 * np.eye(A.shape[0]) + A
    if not is_hurwitz(M):
        raise RateDegenerateError(float(-np.linalg.eigvals(A).real.max()))
    return solve_lyapunov(M, as_matrix(sigma_delta))


def min_admissible_gain(A) -> float:
    """Smallest g with 1/2 I + g A Hurwitz (exclusive), i.e. 1/(2 rho0)."""
    rho0 = float(-np.linalg.eigvals(as_matrix(A)).real.max())
    if rho0 <= 0:
        return np.inf
    return 1.0 / (2.0 * rho0)


def sigma_theta_gain(A, sigma_delta, g: float) -> np.ndarray:
    A = as_matrix(A)
    M = 0.5 * np.eye(A.shape[0]) + g * A
    if not is_hurwitz(M):
        gmin = min_admissible_gain(A)
        raise StabilityError(f"1/2 I + gA is not Hurwitz for g={g}; need g > {gmin:.10g}",
                             min_gain=gmin)
    return solve_lyapunov(M, g * g * as_matrix(sigma_delta))


def sigma_theta_matrix_gain(A, sigma_delta, G) -> np.ndarray:
    """Asymptotic covariance for the matrix step size G/n."""
    A, G = as_matrix(A), as_matrix(G)
    M = 0.5 * np.eye(A.shape[0]) + G @ A
    if not is_hurwitz(M):
        raise StabilityError("1/2 I + G A is not Hurwitz")
    return solve_lyapunov(M, G @ as_matrix(sigma_delta) @ G.T)


def optimal_matrix_gain(A) -> np.ndarray:
    return -np.linalg.inv(as_matrix(A))


def optimal_scalar_gain(A, sigma_delta, g_grid, tol: float = 1e-9):
    """Minimize trace(Sigma_theta^g) over g: grid scan, then golden-section refinement.

    Returns (g_star, trace_value).
    """
    A = as_matrix(A)
    gmin = min_admissible_gain(A)
    grid = np.sort(np.asarray(g_grid, dtype=float))
    grid = grid[grid > gmin * (1 + 1e-6) + HURWITZ_TOL]
    if grid.size == 0:
        raise StabilityError(f"no admissible gain in grid; need g > {gmin:.10g}", min_gain=gmin)

    def cost(g):
        if g <= gmin:
            return np.inf
        return float(np.trace(sigma_theta_gain(A, sigma_delta, g)))

    vals = np.array([cost(g) for g in grid])
    i = int(np.argmin(vals))
    if 0 < i < grid.size - 1:
        res = minimize_scalar(cost, bracket=(grid[i - 1], grid[i], grid[i + 1]),
                              method="golden", tol=tol)
    else:
        lo = grid[max(i - 1, 0)] if i > 0 else max(gmin * (1 + 1e-6), grid[0] / 2)
        hi = grid[min(i + 1, grid.size - 1)] if i < grid.size - 1 else grid[-1] * 2
        res = minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                              options={"xatol": tol})
    g_star = float(res.x)
    return g_star, cost(g_star)


@dataclass(frozen=True)
class SecondOrderTerms:
    sigma_sharp: np.ndarray
    sigma_sharp_1: np.ndarray
    sigma_sharp_2: np.ndarray
    sigma_theta_2: np.ndarray


def sigma_theta_2(A, stats: NoiseStats, sigma_theta_value=None) -> SecondOrderTerms:
    """The n^-2 coefficient of Cov(theta_n), assembled from two Lyapunov solves.

    Sigma_sharp solves (I+A) S + S (I+A)^T + Q = 0 with
    Q = A Sigma_theta A^T - Sigma_Delta - (I+A) C - C^T (I+A)^T, C = E[dM_hat dM^T];
    the result is Sigma_sharp + Sigma_Z - X - X^T with X = E[dM Zhat^T].
    """
    A = as_matrix(A)
    I = np.eye(A.shape[0])
    M = I + A
    if not is_hurwitz(M):
        raise FinerBoundUnavailable(
            f"I + A is not Hurwitz (max Re lambda = {np.linalg.eigvals(A).real.max():.6g})"
        )
    St = sigma_theta(A, stats.sigma_delta) if sigma_theta_value is None else sigma_theta_value
    C = stats.cross_m_mhat
    mix = M @ C + C.T @ M.T
    Q = A @ St @ A.T - stats.sigma_delta - mix
    sharp = solve_lyapunov(M, 0.5 * (Q + Q.T))
    sharp1 = solve_lyapunov(M, A @ St @ A.T - stats.sigma_delta)
    sharp2 = solve_lyapunov(M, -0.5 * (mix + mix.T))
    X = stats.cross_m_zhat
    S2 = sharp + stats.sigma_z - X - X.T
    return SecondOrderTerms(sharp, sharp1, sharp2, 0.5 * (S2 + S2.T))


@dataclass(frozen=True)
class CovariancePrediction:
    """Leading-order covariance prediction for step size g/n.

    ``sigma_theta`` is None in the degraded-rate case, where only the rate
    exponent 2 rho0 (of gA) is predicted.
    """

    sigma_theta: np.ndarray | None
    sigma_theta_2: np.ndarray | None
    rate_exponent: float
    gain: float | np.ndarray
    eigen: EigenReport
    second_order: SecondOrderTerms | None = None


def predict(A, stats: NoiseStats, g: float = 1.0) -> CovariancePrediction:
    """Assemble every available prediction for alpha_n = g/n.

    The gain enters as the substitution A -> gA, f* -> g f*, under which
    the recursion is unchanged; all noise statistics scale by g^2.
    """
    A = as_matrix(A)
    Ag = g * A
    sg = stats.scaled(g) if g != 1.0 else stats
    eig = eigen_report(Ag, sg.sigma_delta)
    if not eig.half_condition:
        return CovariancePrediction(None, None, 2.0 * eig.rho0, g, eig)
    St = solve_lyapunov(0.5 * np.eye(A.shape[0]) + Ag, sg.sigma_delta)
    second = sigma_theta_2(Ag, sg, St) if eig.one_condition else None
    return CovariancePrediction(
        St, None if second is None else second.sigma_theta_2, 1.0, g, eig, second
    )


def predicted_covariance(pred: CovariancePrediction, n: int, scale: float = 1.0):
    """Sigma_theta/n (+ Sigma_theta_2/n^2), or the envelope scale*n^(-2 rho0)
    when the rate is degraded (theory fixes only the exponent)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if pred.sigma_theta is None:
        return scale * float(n) ** (-pred.rate_exponent)
    out = pred.sigma_theta / n
    if pred.sigma_theta_2 is not None:
        out = out + pred.sigma_theta_2 / float(n) ** 2
    return out
