import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from markovsa.chain import FiniteChain, stationary_dist
from markovsa.covtheory import predict
from markovsa.engine import LinearSAProblem, TDProblem, random_linear_problem, td_matrices
from markovsa.errors import BudgetExceededError
from markovsa.harness import fit_rate
from markovsa.oracle import (geometric_checkpoints, propagate_coupled, propagate_linear,
                             propagate_random_linear)
from markovsa.poisson import noise_stats

from brute import enumerate_moments
from conftest import ergodic_chains


def linear_step(prob):
    A, F, g = prob.A, prob.noise, prob.gain

    def step(k, th, z, z_next):
        a = g / (k + 1)
        return th + a * (A @ th + F[z_next])
    return step


def random_linear_step(prob):
    g = prob.gain

    def step(k, th, z, z_next):
        a = g / (k + 1)
        return th + a * (prob.Amap[z_next] @ th + prob.noise[z_next])
    return step


def test_initial_moments(two_state):
    prob = LinearSAProblem(-2.0, [1.0, -1.0], theta0=[0.3])
    res = propagate_linear(two_state, prob, 0, [0])
    assert res.mean[0, 0] == 0.3
    assert res.cov[0, 0, 0] == 0.0


def test_two_step_enumeration(two_state):
    prob = LinearSAProblem(-2.0, [1.0, -1.0], theta0=[0.3])
    res = propagate_linear(two_state, prob, 2, [2], init_dist=0)
    init = np.array([1.0, 0.0])
    mean, cov = enumerate_moments(two_state.transition, init, linear_step(prob), [0.3], 2)
    assert res.mean[0] == pytest.approx(mean, abs=1e-14)
    assert res.cov[0] == pytest.approx(cov, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(ergodic_chains(max_states=3), st.integers(1, 2), st.integers(0, 3), st.floats(0.3, 2.0),
       st.data())
def test_oracle_matches_enumeration(chain, d, n, g, data):
    S = chain.num_states
    F = data.draw(arrays(np.float64, (S, d), elements=st.floats(-2, 2)))
    A = data.draw(arrays(np.float64, (d, d), elements=st.floats(-2, 2)))
    t0 = data.draw(arrays(np.float64, (d,), elements=st.floats(-1, 1)))
    init = data.draw(arrays(np.float64, (S,), elements=st.floats(0.01, 1)))
    init = init / init.sum()
    prob = LinearSAProblem(A, F, g, t0)
    res = propagate_linear(chain, prob, n, [n], init_dist=init)
    mean, cov = enumerate_moments(chain.transition, init, linear_step(prob), t0, n)
    np.testing.assert_allclose(res.mean[0], mean, atol=1e-12)
    np.testing.assert_allclose(res.cov[0], cov, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(ergodic_chains(max_states=3), st.integers(1, 2), st.integers(0, 3), st.data())
def test_random_linear_matches_enumeration(chain, d, n, data):
    S = chain.num_states
    Amap = data.draw(arrays(np.float64, (S, d, d), elements=st.floats(-1, 1))) - 1.5 * np.eye(d)
    bmap = data.draw(arrays(np.float64, (S, d), elements=st.floats(-2, 2)))
    t0 = data.draw(arrays(np.float64, (d,), elements=st.floats(-1, 1)))
    try:
        prob = random_linear_problem(chain, Amap, bmap, theta0=t0)
    except ValueError:
        return
    init = stationary_dist(chain)
    res = propagate_random_linear(chain, prob, n, [n])
    mean, cov = enumerate_moments(chain.transition, init, random_linear_step(prob), t0, n)
    np.testing.assert_allclose(res.mean[0], mean, atol=1e-12)
    np.testing.assert_allclose(res.cov[0], cov, atol=1e-12)


def test_td_pair_chain_enumeration():
    X = FiniteChain(np.array([[0.6, 0.4], [0.3, 0.7]]))
    mats = td_matrices(TDProblem(X, np.array([1.0, -0.5]), 0.5, np.array([[1.0, 0.5], [0.2, 1.0]])))
    prob = mats.random_linear(theta0=[0.5, -0.5])
    P = mats.pair_chain.transition
    res = propagate_random_linear(mats.pair_chain, prob, 3, [3])
    mean, cov = enumerate_moments(P, mats.pair_pi, random_linear_step(prob), prob.theta0, 3)
    np.testing.assert_allclose(res.mean[0], mean, atol=1e-12)
    np.testing.assert_allclose(res.cov[0], cov, atol=1e-12)


def test_random_linear_reduces(three_state):
    Amap = np.stack([np.array([[-1.5, 0.2], [0.0, -1.0]])] * 3)
    bmap = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]])
    prob = random_linear_problem(three_state, Amap, bmap, theta0=[1.0, 2.0])
    cps = [0, 5, 50]
    a = propagate_random_linear(three_state, prob, 50, cps)
    b = propagate_linear(three_state, prob.linearized(), 50, cps)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-14)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-14)
    fixed = random_linear_problem(three_state, Amap, np.tile(bmap[0], (3, 1)))
    c = propagate_random_linear(three_state, fixed, 50, cps)
    np.testing.assert_array_equal(c.cov, 0.0)


def test_mcmc_closed_form(two_state, pm_one):
    # A = -1, g = 1: theta_n is the running mean of f(Phi_1..Phi_n); C_k = (1/2)^k
    n = 40
    res = propagate_linear(two_state, LinearSAProblem(-1.0, pm_one), n, [n])
    k = np.arange(1, n)
    var = (n + 2 * ((n - k) * 0.5 ** k).sum()) / n ** 2
    assert res.cov[0, 0, 0] == pytest.approx(var, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(ergodic_chains(max_states=4), st.integers(1, 2), st.data())
def test_moment_state_invariants(chain, d, data):
    S = chain.num_states
    F = data.draw(arrays(np.float64, (S, d), elements=st.floats(-2, 2)))
    prob = LinearSAProblem(-np.eye(d), F, 1.0, np.ones(d))
    res = propagate_linear(chain, prob, 25, [25], init_dist=0)
    fin = res.final
    assert abs(fin.occupancy.sum() - 1) <= 1e-12
    np.testing.assert_allclose(fin.S, np.swapaxes(fin.S, 1, 2), atol=1e-14)
    assert np.linalg.eigvalsh(fin.second_moment).min() >= -1e-10
    lhs = (fin.m ** 2).sum(axis=1)
    rhs = fin.occupancy * np.trace(fin.S, axis1=1, axis2=2)
    assert np.all(lhs <= rhs + 1e-10)


def test_budget():
    chain = FiniteChain(np.full((3, 3), 1 / 3))
    with pytest.raises(BudgetExceededError):
        propagate_linear(chain, LinearSAProblem(-1.0, np.zeros(3)), 10 ** 6, [10], budget=1e3)


def test_geometric_checkpoints():
    cps = geometric_checkpoints(1000)
    assert cps[0] == 1 and cps[-1] == 1000
    assert np.all(np.diff(cps) > 0)
    assert len(geometric_checkpoints(100, ratio=10)) == 3


def test_prediction_at_ten_thousand(two_state, pm_one):
    pred = predict(-2.0, noise_stats(two_state, pm_one))
    res = propagate_linear(two_state, LinearSAProblem(-2.0, pm_one), 10_000, [10_000])
    target = pred.sigma_theta / 1e4 + pred.sigma_theta_2 / 1e8
    assert abs(res.cov[0, 0, 0] - target[0, 0]) <= 1e-6 * res.cov[0, 0, 0]


def test_unbounded_scaled_moment(two_state, pm_one):
    # rho0 = 0.3 < 1/2: n^{2 rho} E|v theta|^2 grows for rho > rho0
    pred = predict(-0.3, noise_stats(two_state, pm_one))
    cps = geometric_checkpoints(20_000)
    res = propagate_linear(two_state, LinearSAProblem(-0.3, pm_one), 20_000, cps)
    proj = res.projected(pred.eigen.leading_left_eigenvector)
    rho = 0.35
    fit = fit_rate(cps, cps ** (2 * rho) * proj, (200, 20_000))
    assert fit.exponent > 0


def test_coupled_oracle_difference(two_state):
    prob = random_linear_problem(two_state, [-2.5, -1.5], [-3.5, -0.5], theta0=[0.7])
    res, err2 = propagate_coupled(two_state, prob, 3, [0, 1, 2, 3])
    assert err2[0] == 0.0

    def step(k, th, z, z_next):
        a = 1.0 / (k + 1)
        circ = th[0] + a * (prob.Amap[z_next, 0, 0] * th[0] + prob.noise[z_next, 0])
        bull = th[1] + a * (prob.A[0, 0] * th[1] + prob.noise[z_next, 0])
        return np.array([circ, bull])

    init = stationary_dist(two_state)
    for n in (1, 2, 3):
        mean, cov = enumerate_moments(two_state.transition, init, step, [0.7, 0.7], n)
        e2 = cov[0, 0] + cov[1, 1] - 2 * cov[0, 1] + (mean[0] - mean[1]) ** 2
        assert err2[n] == pytest.approx(e2, abs=1e-12)
