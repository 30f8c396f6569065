"""Markov noise models: finite chains, the uniformized M/M/1 queue, seeded samplers."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import ErgodicityError, StabilityError

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class FiniteChain:
    """Row-stochastic transition matrix on states 0..S-1.

    Ergodicity is not enforced at construction (so a reducible chain can be
    built and then diagnosed); operations that need a unique invariant law
    call :func:`ergodicity_check` themselves.
    """

    transition: np.ndarray

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise ValueError(f"transition must be a non-empty square matrix, got shape {P.shape}")
        if not np.all(np.isfinite(P)) or P.min() < 0.0 or P.max() > 1.0:
            raise ValueError("transition entries must lie in [0, 1]")
        err = np.abs(P.sum(axis=1) - 1.0).max()
        if err > ROW_SUM_TOL:
            raise ValueError(f"rows must sum to 1 (max deviation {err:.3g})")
        P.setflags(write=False)
        object.__setattr__(self, "transition", P)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]


@dataclass(frozen=True)
class QueueChain:
    """Uniformized M/M/1 queue: up w.p. ``arrival_prob``, else down (reflected at 0).

    ``analysis_truncation`` is the level N used by finite-section computations;
    sampling never truncates.
    """

    arrival_prob: float
    analysis_truncation: int = 200

    def __post_init__(self):
        p = float(self.arrival_prob)
        if not 0.0 < p < 1.0:
            raise ValueError("arrival_prob must lie in (0, 1)")
        if p >= 0.5:
            raise StabilityError(f"load {p / (1 - p):.6g} >= 1: queue is not positive recurrent")
        if self.analysis_truncation < 1:
            raise ValueError("analysis_truncation must be >= 1")

    @property
    def service_prob(self) -> float:
        return 1.0 - self.arrival_prob

    @property
    def load(self) -> float:
        return self.arrival_prob / self.service_prob

    def tail_mass(self, level: int | None = None) -> float:
        """Stationary mass strictly above ``level`` (default: the truncation)."""
        N = self.analysis_truncation if level is None else level
        return self.load ** (N + 1)

    def truncated(self, level: int | None = None) -> FiniteChain:
        """Finite section on 0..N with a reflecting upper boundary."""
        N = self.analysis_truncation if level is None else level
        p, q = self.arrival_prob, self.service_prob
        P = np.zeros((N + 1, N + 1))
        idx = np.arange(N + 1)
        P[idx[:-1], idx[:-1] + 1] = p
        P[idx[1:], idx[1:] - 1] = q
        P[0, 0] += q
        P[N, N] += p
        return FiniteChain(P)


@dataclass(frozen=True)
class ErgodicityReport:
    irreducible: bool
    aperiodic: bool
    second_eigenvalue_modulus: float
    classes: list = field(default_factory=list)
    period: int = 1

    @property
    def ergodic(self) -> bool:
        return self.irreducible and self.aperiodic


def _class_period(P: np.ndarray, members: np.ndarray) -> int:
    """gcd of cycle lengths in a strongly connected class, from BFS levels."""
    sub = (P[np.ix_(members, members)] > 0).astype(float)
    order, pred = breadth_first_order(sub, 0, directed=True, return_predecessors=True)
    level = np.full(len(members), -1)
    level[0] = 0
    for node in order[1:]:
        level[node] = level[pred[node]] + 1
    g = 0
    for u, v in zip(*np.nonzero(sub)):
        g = gcd(g, int(level[u] + 1 - level[v]))
    return g


def ergodicity_check(chain: FiniteChain) -> ErgodicityReport:
    P = chain.transition
    ncomp, labels = connected_components(P > 0, directed=True, connection="strong")
    classes = [np.flatnonzero(labels == c).tolist() for c in range(ncomp)]
    if ncomp == 1:
        period = _class_period(P, np.arange(chain.num_states))
        aperiodic = period == 1
    else:
        # closed classes are the recurrent ones; a transient class cannot hold pi
        period = 0
        for members in classes:
            m = np.asarray(members)
            outside = np.setdiff1d(np.arange(chain.num_states), m)
            if outside.size and P[np.ix_(m, outside)].sum() > 0:
                continue
            period = gcd(period, _class_period(P, m))
        aperiodic = period == 1
    moduli = np.sort(np.abs(np.linalg.eigvals(P)))[::-1]
    lam2 = float(moduli[1]) if len(moduli) > 1 else 0.0
    return ErgodicityReport(
        irreducible=ncomp == 1,
        aperiodic=aperiodic,
        second_eigenvalue_modulus=lam2,
        classes=classes,
        period=period,
    )


def require_ergodic(chain: FiniteChain) -> ErgodicityReport:
    rep = ergodicity_check(chain)
    if not rep.irreducible:
        raise ErgodicityError(
            f"chain is reducible: communication classes {rep.classes}", classes=rep.classes
        )
    if not rep.aperiodic:
        raise ErgodicityError(f"chain is periodic with period {rep.period}", period=rep.period)
    return rep


def stationary_dist(chain: FiniteChain) -> np.ndarray:
    """Invariant law by a direct solve of (P^T - I) pi = 0 with a normalization row."""
    require_ergodic(chain)
    P = chain.transition
    S = chain.num_states
    M = P.T - np.eye(S)
    M[-1, :] = 1.0
    rhs = np.zeros(S)
    rhs[-1] = 1.0
    pi = np.linalg.solve(M, rhs)
    # one refinement step pushes the residual to rounding level
    r = pi @ P - pi
    M2 = P.T - np.eye(S)
    M2[-1, :] = 1.0
    rr = np.concatenate([r[:-1], [pi.sum() - 1.0]])
    pi = pi - np.linalg.solve(M2, rr)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def mm1_stationary(queue: QueueChain, z) -> float | np.ndarray:
    rho = queue.load
    if rho >= 1.0:
        raise StabilityError(f"load {rho} >= 1")
    return (1.0 - rho) * rho ** np.asarray(z, dtype=float)


def mm1_stationary_mean(queue: QueueChain) -> float:
    rho = queue.load
    return rho / (1.0 - rho)


class ChainSampler:
    """Seeded path sampler for a FiniteChain or QueueChain.

    ``initial`` is either a state index or a probability vector over states;
    in the latter case the initial state is drawn from the sampler's own
    stream before any transition.  Each transition consumes exactly one
    uniform double, so a path of length n is a deterministic function of
    (model, seed, initial).
    """

    def __init__(self, model, seed, initial=0):
        self.model = model
        self.seed = seed
        self.rng = make_generator(seed)
        self.current_state = _draw_initial(model, self.rng, initial)

    def __repr__(self):
        return f"ChainSampler(state={self.current_state}, seed={self.seed!r})"


def make_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _draw_initial(model, rng, initial) -> int:
    if np.ndim(initial) == 0:
        state = int(initial)
        if state < 0 or (isinstance(model, FiniteChain) and state >= model.num_states):
            raise ValueError(f"initial state {state} out of range")
        return state
    dist = np.asarray(initial, dtype=float)
    cum = np.cumsum(dist)
    return int(min(np.searchsorted(cum, rng.random() * cum[-1], side="right"), len(dist) - 1))


def _step_finite(cum: np.ndarray, state, u):
    # number of cumulative entries <= u equals searchsorted(..., side="right")
    nxt = (u[..., None] >= cum[state]).sum(axis=-1)
    return np.minimum(nxt, cum.shape[1] - 1)


def _queue_path(start, up: np.ndarray) -> np.ndarray:
    """Lindley recursion z_{k+1} = max(z_k + x_k, 0) with x = +-1, vectorized.

    ``up`` has shape (..., n); ``start`` broadcasts against (...).
    """
    steps = np.where(up, 1, -1).astype(np.int64)
    walk = np.cumsum(steps, axis=-1)
    start = np.asarray(start, dtype=np.int64)
    # z_k = max(z_0 + W_k, W_k - min_{0<=j<=k} W_j), with W_0 = 0
    low = np.minimum(np.minimum.accumulate(walk, axis=-1), 0)
    body = np.maximum(start[..., None] + walk, walk - low)
    return np.concatenate([start[..., None], body], axis=-1)


def sample_path(sampler: ChainSampler, n: int) -> np.ndarray:
    """Return Phi_0..Phi_n and advance the sampler to Phi_n."""
    if n < 0:
        raise ValueError("horizon must be >= 0")
    model = sampler.model
    u = sampler.rng.random(n)
    if isinstance(model, QueueChain):
        path = _queue_path(sampler.current_state, u < model.arrival_prob)
    else:
        cum = np.cumsum(model.transition, axis=1)
        path = np.empty(n + 1, dtype=np.int64)
        path[0] = state = sampler.current_state
        for k in range(n):
            state = int(_step_finite(cum, state, u[k]))
            path[k + 1] = state
    sampler.current_state = int(path[-1])
    return path


def sample_paths(model, seeds, n: int, initial=0) -> np.ndarray:
    """Paths for many independent samplers at once, shape (len(seeds), n+1).

    Row t is bit-identical to ``sample_path(ChainSampler(model, seeds[t], initial), n)``.
    """
    rngs = [make_generator(s) for s in seeds]
    starts = np.array([_draw_initial(model, r, initial) for r in rngs], dtype=np.int64)
    u = np.empty((len(rngs), n))
    for t, r in enumerate(rngs):
        u[t] = r.random(n)
    if isinstance(model, QueueChain):
        return _queue_path(starts, u < model.arrival_prob)
    cum = np.cumsum(model.transition, axis=1)
    paths = np.empty((len(rngs), n + 1), dtype=np.int64)
    paths[:, 0] = state = starts
    for k in range(n):
        state = _step_finite(cum, state, u[:, k])
        paths[:, k + 1] = state
    return paths
