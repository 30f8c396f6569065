"""Stochastic approximation recursions driven by a sampled noise path.

Every runner takes a path of state indices Phi_0..Phi_N, either one path of
shape (N+1,) or a batch of shape (T, N+1).  The n-th update uses the step
alpha_{n+1} = g/(n+1) and the state Phi_{n+1}.  Trajectories store the error
theta_n - theta_star; ``Trajectory.theta_star`` recovers absolute iterates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import FiniteChain, stationary_dist
from .covtheory import as_matrix, is_hurwitz
from .errors import DegenerateBasisError, SingularGainError, StabilityError
from .poisson import RESIDUAL_TOL, PoissonSolution, as_state_function

SNR_COND_MAX = 1e12


@dataclass(frozen=True)
class LinearSAProblem:
    A: np.ndarray
    noise: np.ndarray
    gain: float = 1.0
    theta0: np.ndarray | None = None

    def __post_init__(self):
        A = as_matrix(self.A)
        F = as_state_function(self.noise)
        if F.shape[1] != A.shape[0]:
            raise ValueError(f"noise dimension {F.shape[1]} does not match A {A.shape}")
        t0 = np.zeros(A.shape[0]) if self.theta0 is None else np.asarray(self.theta0, float).reshape(-1)
        if t0.shape != (A.shape[0],):
            raise ValueError("theta0 has the wrong dimension")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "noise", F)
        object.__setattr__(self, "theta0", t0)

    @property
    def dim(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class RandomLinearSAProblem:
    """theta_circ recursion with A_n = Amap[Phi_n], b_n = bmap[Phi_n].

    Build with :func:`random_linear_problem`, which fills the steady-state
    means and theta_star from the chain.
    """

    Amap: np.ndarray
    bmap: np.ndarray
    A: np.ndarray
    b: np.ndarray
    theta_star: np.ndarray
    theta0: np.ndarray
    gain: float = 1.0

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def noise(self) -> np.ndarray:
        """Delta(z) = Amap(z) theta_star - bmap(z), zero mean under pi."""
        return self.Amap @ self.theta_star - self.bmap

    def linearized(self) -> LinearSAProblem:
        return LinearSAProblem(self.A, self.noise, self.gain, self.theta0)


def random_linear_problem(chain: FiniteChain, Amap, bmap, theta0=None, gain=1.0,
                          pi=None) -> RandomLinearSAProblem:
    Amap = np.asarray(Amap, dtype=float)
    if Amap.ndim == 1:
        Amap = Amap[:, None, None]
    bmap = as_state_function(bmap, chain.num_states)
    S, d = bmap.shape
    if Amap.shape != (S, d, d):
        raise ValueError(f"Amap has shape {Amap.shape}, expected {(S, d, d)}")
    if pi is None:
        pi = stationary_dist(chain)
    A = np.einsum("z,zij->ij", pi, Amap)
    b = pi @ bmap
    if not is_hurwitz(A):
        raise StabilityError(f"steady-state mean of Amap is not Hurwitz: {np.linalg.eigvals(A)}")
    theta_star = np.linalg.solve(A, b)
    if np.abs(A @ theta_star - b).max() > 1e-8 * max(1.0, np.abs(b).max()):
        raise StabilityError("A theta* = b could not be solved accurately")
    t0 = np.zeros(d) if theta0 is None else np.asarray(theta0, float).reshape(d)
    return RandomLinearSAProblem(Amap, bmap, A, b, theta_star, t0, float(gain))


@dataclass(frozen=True)
class Trajectory:
    """Errors at checkpoints; ``values`` has shape (K, d) or (K, T, d) for batches."""

    checkpoints: np.ndarray
    values: np.ndarray
    theta_star: np.ndarray
    dense: np.ndarray | None = None
    aux: dict = field(default_factory=dict)

    @property
    def absolute(self) -> np.ndarray:
        return self.values + self.theta_star

    def at(self, n: int) -> np.ndarray:
        k = int(np.searchsorted(self.checkpoints, n))
        if k >= len(self.checkpoints) or self.checkpoints[k] != n:
            raise KeyError(f"{n} is not a checkpoint")
        return self.values[k]


def _checkpoints(checkpoints, path_len: int) -> np.ndarray:
    cps = np.asarray(checkpoints, dtype=np.int64).reshape(-1)
    if cps.size and (np.any(np.diff(cps) <= 0) or cps[0] < 0):
        raise ValueError("checkpoints must be strictly increasing and >= 0")
    if cps.size and cps[-1] > path_len - 1:
        raise ValueError(f"path has {path_len} states; checkpoint {cps[-1]} needs {cps[-1] + 1}")
    return cps


class _Recorder:
    def __init__(self, cps, shape, dense_len=None):
        self.cps = cps
        self.out = np.empty((len(cps),) + shape)
        self.k = 0
        self.dense = None if dense_len is None else np.empty((dense_len,) + shape)

    def __call__(self, n, theta):
        if self.dense is not None:
            self.dense[n] = theta
        while self.k < len(self.cps) and self.cps[self.k] == n:
            self.out[self.k] = theta
            self.k += 1

    def horizon(self):
        if self.dense is not None:
            return len(self.dense) - 1
        return int(self.cps[-1]) if len(self.cps) else 0


def _affine_run(step, theta0, path, checkpoints, dense=False):
    """Generic driver: theta_{n+1} = step(n, theta_n, Phi_{n+1})."""
    path = np.asarray(path)
    batch = path.shape[:-1]
    cps = _checkpoints(checkpoints, path.shape[-1])
    theta = np.broadcast_to(np.asarray(theta0, float), batch + (len(theta0),)).copy()
    rec = _Recorder(cps, theta.shape, path.shape[-1] if dense else None)
    rec(0, theta)
    for n in range(rec.horizon()):
        theta = step(n, theta, path[..., n + 1])
        rec(n + 1, theta)
    return cps, rec.out, rec.dense


def run_linear_sa(problem: LinearSAProblem, path, checkpoints, dense=False) -> Trajectory:
    A, F, g = problem.A, problem.noise, problem.gain
    At = A.T

    def step(n, theta, z):
        a = g / (n + 1)
        return theta + a * (theta @ At + F[z])

    cps, out, full = _affine_run(step, problem.theta0, path, checkpoints, dense)
    return Trajectory(cps, out, np.zeros(problem.dim), full)


def run_mcmc_average(chain, F, path, checkpoints, theta_star=None) -> Trajectory:
    """Running-mean estimator of pi(F), computed in both of its forms.

    The recursion theta_{n+1} = theta_n + (F(Phi_{n+1}) - theta_n)/(n+1) is
    the stored trajectory; ``aux['running_mean']`` holds the direct average of
    F(Phi_1..Phi_n) and ``aux['max_form_gap']`` their largest difference.
    ``F`` is an (S, d) array or, for an unbounded chain, a callable of states.
    """
    path = np.asarray(path)
    Fz = np.asarray(F(path) if callable(F) else as_state_function(F)[path], dtype=float)
    if Fz.ndim == path.ndim:
        Fz = Fz[..., None]
    if theta_star is None:
        if not isinstance(chain, FiniteChain):
            raise ValueError("theta_star is required for chains without a finite stationary law")
        theta_star = stationary_dist(chain) @ as_state_function(F)
    theta_star = np.asarray(theta_star, dtype=float).reshape(-1)
    cps = _checkpoints(checkpoints, path.shape[-1])
    d = Fz.shape[-1]
    theta = np.zeros(path.shape[:-1] + (d,))
    rec = _Recorder(cps, theta.shape)
    rec(0, theta)
    for n in range(rec.horizon()):
        theta = theta + (Fz[..., n + 1, :] - theta) / (n + 1)
        rec(n + 1, theta)
    csum = np.cumsum(Fz[..., 1:, :], axis=-2)
    means = np.stack([np.zeros(theta.shape) if n == 0 else csum[..., n - 1, :] / n for n in cps])
    gap = float(np.abs(means[cps > 0] - rec.out[cps > 0]).max()) if np.any(cps > 0) else 0.0
    return Trajectory(cps, rec.out - theta_star, theta_star,
                      aux={"running_mean": means, "max_form_gap": gap})


def run_random_linear_sa(problem: RandomLinearSAProblem, path, checkpoints,
                         dense=False) -> Trajectory:
    g = problem.gain
    AmapT = np.swapaxes(problem.Amap, -1, -2)
    drive = problem.noise

    def step(n, theta, z):
        a = g / (n + 1)
        return theta + a * (np.einsum("...i,...ij->...j", theta, AmapT[z]) + drive[z])

    cps, out, full = _affine_run(step, problem.theta0, path, checkpoints, dense)
    return Trajectory(cps, out, problem.theta_star, full)


# ---------------------------------------------------------------- TD learning


@dataclass(frozen=True)
class TDProblem:
    state_chain: FiniteChain
    cost: np.ndarray
    discount: float
    basis: np.ndarray

    def __post_init__(self):
        S = self.state_chain.num_states
        c = np.asarray(self.cost, dtype=float).reshape(-1)
        psi = as_state_function(self.basis, S)
        if c.shape != (S,):
            raise ValueError(f"cost must have length {S}")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "basis", psi)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class TDMatrices:
    """Steady-state TD(0) quantities and their per-transition maps.

    The noise state is the pair (X_n, X_{n+1}); ``pairs`` lists the pairs with
    positive transition probability, ``pair_chain`` is the induced chain on
    them, and ``Amap``/``bmap`` are indexed by pair.  ``b`` follows the
    convention b_{n+1} = -c(X_n) psi(X_n), so that A theta* = b.
    """

    A: np.ndarray
    b: np.ndarray
    theta_star: np.ndarray
    Amap: np.ndarray
    bmap: np.ndarray
    pairs: np.ndarray
    pair_index: np.ndarray
    pair_chain: FiniteChain
    pair_pi: np.ndarray

    def pair_path(self, x_path) -> np.ndarray:
        """Map X_0..X_N to pair states Phi_1..Phi_N (length N)."""
        x = np.asarray(x_path)
        idx = self.pair_index[x[..., :-1], x[..., 1:]]
        if np.any(idx < 0):
            raise ValueError("path uses a zero-probability transition")
        return idx

    def random_linear(self, theta0=None, gain=1.0) -> RandomLinearSAProblem:
        d = self.A.shape[0]
        t0 = np.zeros(d) if theta0 is None else np.asarray(theta0, float).reshape(d)
        return RandomLinearSAProblem(self.Amap, self.bmap, self.A, self.b, self.theta_star,
                                     t0, float(gain))


def td_matrices(problem: TDProblem) -> TDMatrices:
    P = problem.state_chain.transition
    pi = stationary_dist(problem.state_chain)
    psi, c, beta = problem.basis, problem.cost, problem.discount
    gram = psi.T @ (pi[:, None] * psi)
    if np.linalg.matrix_rank(gram, tol=1e-10 * max(1.0, np.abs(gram).max())) < problem.dim:
        raise DegenerateBasisError("basis columns are linearly dependent under pi")
    xs, ys = np.nonzero(P > 0)
    S = P.shape[0]
    pair_index = -np.ones((S, S), dtype=np.int64)
    pair_index[xs, ys] = np.arange(len(xs))
    # (x, y) -> (y, w) with probability P(y, w)
    Q = np.zeros((len(xs), len(xs)))
    for k, y in enumerate(ys):
        for w in np.flatnonzero(P[y] > 0):
            Q[k, pair_index[y, w]] = P[y, w]
    pair_chain = FiniteChain(Q / Q.sum(axis=1, keepdims=True))
    pair_pi = pi[xs] * P[xs, ys]
    Amap = np.einsum("ki,kj->kij", psi[xs], beta * psi[ys] - psi[xs])
    bmap = -c[xs][:, None] * psi[xs]
    A = np.einsum("k,kij->ij", pair_pi, Amap)
    b = pair_pi @ bmap
    if np.linalg.matrix_rank(A) < problem.dim:
        raise DegenerateBasisError("steady-state TD matrix A is singular")
    theta_star = np.linalg.solve(A, b)
    return TDMatrices(A, b, theta_star, Amap, bmap, np.stack([xs, ys], axis=1), pair_index,
                      pair_chain, pair_pi)


def run_td0(problem: TDProblem, x_path, checkpoints, theta0=None, gain=1.0,
            theta_star=None) -> Trajectory:
    """TD(0): theta_{n+1} = theta_n + alpha_{n+1} d_{n+1} psi(X_n)."""
    x = np.asarray(x_path)
    psi, c, beta = problem.basis, problem.cost, problem.discount
    if theta_star is None:
        theta_star = td_matrices(problem).theta_star
    d = problem.dim
    t0 = np.zeros(d) if theta0 is None else np.asarray(theta0, float).reshape(d)
    cps = _checkpoints(checkpoints, x.shape[-1])
    theta = np.broadcast_to(t0, x.shape[:-1] + (d,)).copy()
    rec = _Recorder(cps, theta.shape)
    rec(0, theta)
    for n in range(rec.horizon()):
        a = gain / (n + 1)
        p0, p1 = psi[x[..., n]], psi[x[..., n + 1]]
        td = c[x[..., n]] + beta * np.sum(theta * p1, -1) - np.sum(theta * p0, -1)
        theta = theta + a * td[..., None] * p0
        rec(n + 1, theta)
    return Trajectory(cps, rec.out - theta_star, np.asarray(theta_star, float))


def run_td0_error_form(mats: TDMatrices, x_path, checkpoints, theta0=None, gain=1.0) -> Trajectory:
    """TD(0) written as the random linear recursion on the pair chain."""
    x = np.asarray(x_path)
    d = mats.A.shape[0]
    t0 = np.zeros(d) if theta0 is None else np.asarray(theta0, float).reshape(d)
    prob = mats.random_linear(t0 - mats.theta_star, gain)
    pp = mats.pair_path(x)
    # prepend a dummy Phi_0 so that Phi_{n+1} = (X_n, X_{n+1}) lines up with step n
    pp = np.concatenate([np.zeros(pp.shape[:-1] + (1,), dtype=pp.dtype), pp], axis=-1)
    return run_random_linear_sa(prob, pp, checkpoints)


@dataclass(frozen=True)
class SNRResult:
    snr: Trajectory
    lstd: Trajectory
    ridged_steps: np.ndarray
    first_clean_prefix: int

    def equivalence_gap(self) -> float:
        """Largest relative SNR-LSTD gap over checkpoints in the ridge-free prefix."""
        ok = self.snr.checkpoints <= self.first_clean_prefix
        ok &= self.snr.checkpoints >= 1
        if not ok.any():
            return float("nan")
        a = self.snr.absolute[ok]
        b = self.lstd.absolute[ok]
        return float((np.linalg.norm(a - b, axis=-1) / np.maximum(np.linalg.norm(b, axis=-1), 1e-300)).max())


def run_snr_lstd(problem: TDProblem, x_path, checkpoints, ridge: float = 1e-8, gain=1.0,
                 A0=None, theta0=None, cond_max: float = SNR_COND_MAX,
                 max_ridged: int | None = None) -> SNRResult:
    """Stochastic Newton-Raphson TD(0) alongside LSTD(0) on a single path.

    Ahat_{n+1} = Ahat_n + alpha_{n+1}(A_{n+1} - Ahat_n) and likewise for bhat,
    initialized at ``A0`` (default -I) and bhat_0 = A0 theta0 so that both
    methods start from the same point.  When Ahat_{n+1} is ill-conditioned
    (cond > cond_max) both methods invert Ahat + ridge*I instead and the step
    is recorded; SNR = LSTD is only guaranteed on the ridge-free prefix.
    ``max_ridged`` bounds the number of ridged steps before SingularGainError.
    """
    x = np.asarray(x_path)
    if x.ndim != 1:
        raise ValueError("run_snr_lstd takes a single path")
    psi, c, beta = problem.basis, problem.cost, problem.discount
    mats = td_matrices(problem)
    d = problem.dim
    I = np.eye(d)
    Ahat = -I.copy() if A0 is None else as_matrix(A0).copy()
    theta = np.zeros(d) if theta0 is None else np.asarray(theta0, float).reshape(d)
    bhat = Ahat @ theta
    cps = _checkpoints(checkpoints, len(x))
    rs, rl = _Recorder(cps, (d,)), _Recorder(cps, (d,))
    rs(0, theta)
    rl(0, theta)
    ridged = []
    clean_until = None
    for n in range(rs.horizon()):
        a = gain / (n + 1)
        x0, x1 = x[n], x[n + 1]
        A_next = np.outer(psi[x0], beta * psi[x1] - psi[x0])
        b_next = -c[x0] * psi[x0]
        Ahat = Ahat + a * (A_next - Ahat)
        bhat = bhat + a * (b_next - bhat)
        M = Ahat
        if np.linalg.cond(Ahat) > cond_max:
            M = Ahat + ridge * I
            ridged.append(n + 1)
            if clean_until is None:
                clean_until = n
            if max_ridged is not None and len(ridged) > max_ridged:
                raise SingularGainError(f"Ahat singular at step {n + 1}", n + 1)
        td = c[x0] + beta * theta @ psi[x1] - theta @ psi[x0]
        theta = theta - a * np.linalg.solve(M, td * psi[x0])
        rs(n + 1, theta)
        rl(n + 1, np.linalg.solve(M, bhat))
    if clean_until is None:
        clean_until = rs.horizon()
    ts = mats.theta_star
    return SNRResult(Trajectory(cps, rs.out - ts, ts), Trajectory(cps, rl.out - ts, ts),
                     np.asarray(ridged, dtype=np.int64), clean_until)


# ------------------------------------------------ decomposition and coupling


@dataclass(frozen=True)
class DecompositionTrace:
    """Dense traces over n = 0..N (xi and theta_3 are NaN at n = 0)."""

    theta: np.ndarray
    theta_M: np.ndarray
    theta_T: np.ndarray
    xi: np.ndarray
    theta_3: np.ndarray
    z_path: np.ndarray
    alpha: np.ndarray

    def sum_gap(self) -> float:
        return float(np.abs(self.theta - self.theta_M - self.theta_T).max())

    def xi_gap(self) -> float:
        n = np.arange(1, len(self.theta))
        want = self.theta_T[1:] + self.alpha[1:, None] * self.z_path[n + 1]
        return float(np.abs(self.xi[1:] - want).max())

    def three_term_gap(self) -> float:
        return float(np.abs(self.theta[1:] - self.theta_M[1:] - self.xi[1:] - self.theta_3[1:]).max())


def run_decomposition(chain: FiniteChain, problem: LinearSAProblem, fhat: PoissonSolution,
                      path, horizon: int) -> DecompositionTrace:
    """Martingale/telescoping split of the linear recursion along one path.

    Needs Phi_0..Phi_{N+1}.  With a general gain g the change of variables
    Xi_n = theta_T_n + alpha_n Z_{n+1} evolves with drive -alpha_n (I/g + A) Z_{n+1};
    for g = 1 this is the familiar (I + A).
    """
    path = np.asarray(path)
    N = horizon
    if path.ndim != 1 or len(path) < N + 2:
        raise ValueError(f"need a single path of at least {N + 2} states")
    P = chain.transition
    H = as_state_function(fhat.fhat, chain.num_states)
    fstar = problem.noise
    resid = np.abs(H - P @ H - fstar).max()
    if resid > RESIDUAL_TOL * max(1.0, np.abs(fstar).max()):
        raise ValueError(f"fhat does not solve Poisson's equation for this noise (residual {resid:.3g})")
    A, g = problem.A, problem.gain
    d = problem.dim
    I = np.eye(d)
    PH = P @ H
    Z = H[path]
    dM = H[path[1:]] - PH[path[:-1]]          # dM[k] = Delta^m_{k+1}
    alpha = np.concatenate([[np.nan], g / np.arange(1, N + 2)])
    th = np.empty((N + 1, d))
    tM = np.empty((N + 1, d))
    tT = np.empty((N + 1, d))
    xi = np.full((N + 1, d), np.nan)
    th[0] = tM[0] = problem.theta0
    tT[0] = 0.0
    for n in range(N):
        a = alpha[n + 1]
        th[n + 1] = th[n] + a * (A @ th[n] + fstar[path[n + 1]])
        tM[n + 1] = tM[n] + a * (A @ tM[n] + dM[n + 1])
        tT[n + 1] = tT[n] + a * (A @ tT[n] + Z[n + 1] - Z[n + 2])
    xi[1] = alpha[1] * Z[1]
    for n in range(1, N):
        xi[n + 1] = xi[n] + alpha[n + 1] * (A @ xi[n] - alpha[n] * (I / g + A) @ Z[n + 1])
    theta3 = np.full((N + 1, d), np.nan)
    theta3[1:] = -alpha[1:N + 1, None] * Z[2:N + 2]
    return DecompositionTrace(th, tM, tT, xi, theta3, Z, alpha[:N + 1])


def telescoping_gap(chain: FiniteChain, fstar, fhat, path) -> float:
    """max_n |f*(Phi_n) - (dM_{n+1} + Z_n - Z_{n+1})| along a path."""
    path = np.asarray(path)
    H = as_state_function(fhat)
    F = as_state_function(fstar, chain.num_states)
    dM = H[path[1:]] - (chain.transition @ H)[path[:-1]]
    rhs = dM + H[path[:-1]] - H[path[1:]]
    return float(np.abs(F[path[:-1]] - rhs).max())


@dataclass(frozen=True)
class CouplingTrace:
    checkpoints: np.ndarray
    theta_circ: np.ndarray
    theta_bullet: np.ndarray
    err: np.ndarray

    def difference_gap(self) -> float:
        return float(np.abs(self.err - (self.theta_circ - self.theta_bullet)).max())


def run_coupled(problem: RandomLinearSAProblem, path, checkpoints) -> CouplingTrace:
    """Random-matrix iterate, its mean-matrix twin on the same path, and the
    coupling error propagated through its own recursion."""
    g = problem.gain
    A = problem.A
    AmapT = np.swapaxes(problem.Amap, -1, -2)
    drive = problem.noise
    path = np.asarray(path)
    cps = _checkpoints(checkpoints, path.shape[-1])
    d = problem.dim
    shape = path.shape[:-1] + (d,)
    circ = np.broadcast_to(problem.theta0, shape).copy()
    bullet = circ.copy()
    err = np.zeros(shape)
    rc, rb, re = _Recorder(cps, shape), _Recorder(cps, shape), _Recorder(cps, shape)
    for r, v in ((rc, circ), (rb, bullet), (re, err)):
        r(0, v)
    for n in range(rc.horizon()):
        a = g / (n + 1)
        z = path[..., n + 1]
        An = AmapT[z]
        dA_circ = np.einsum("...i,...ij->...j", circ, An) - circ @ A.T
        err = err + a * (err @ A.T + dA_circ)
        circ = circ + a * (np.einsum("...i,...ij->...j", circ, An) + drive[z])
        bullet = bullet + a * (bullet @ A.T + drive[z])
        rc(n + 1, circ)
        rb(n + 1, bullet)
        re(n + 1, err)
    return CouplingTrace(cps, rc.out, rb.out, re.out)
