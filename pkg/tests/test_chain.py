import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markovsa.chain import (ChainSampler, FiniteChain, QueueChain, ergodicity_check,
                            mm1_stationary, mm1_stationary_mean, require_ergodic, sample_path,
                            sample_paths, stationary_dist)
from markovsa.errors import ErgodicityError, StabilityError

from conftest import ergodic_chains


def test_rejects_bad_rows():
    with pytest.raises(ValueError):
        FiniteChain(np.array([[0.5, 0.6], [0.5, 0.5]]))
    with pytest.raises(ValueError):
        FiniteChain(np.array([[1.5, -0.5], [0.5, 0.5]]))
    with pytest.raises(ValueError):
        FiniteChain(np.ones((2, 3)) / 3)


def test_stationary_uniform():
    pi = stationary_dist(FiniteChain(np.full((2, 2), 0.5)))
    np.testing.assert_allclose(pi, [0.5, 0.5], atol=1e-15)


def test_stationary_asymmetric():
    p, q = 0.25, 0.125
    pi = stationary_dist(FiniteChain(np.array([[1 - p, p], [q, 1 - q]])))
    np.testing.assert_allclose(pi, [1 / 3, 2 / 3], atol=1e-14)


def test_identity_is_reducible():
    with pytest.raises(ErgodicityError) as exc:
        stationary_dist(FiniteChain(np.eye(3)))
    assert len(exc.value.classes) == 3


def test_periodic_flagged():
    rep = ergodicity_check(FiniteChain(np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert rep.irreducible and not rep.aperiodic
    assert rep.period == 2
    with pytest.raises(ErgodicityError):
        require_ergodic(FiniteChain(np.array([[0.0, 1.0], [1.0, 0.0]])))


def test_second_eigenvalue():
    rep = ergodicity_check(FiniteChain(np.full((2, 2), 0.5)))
    assert rep.second_eigenvalue_modulus == pytest.approx(0.0, abs=1e-14)
    rep = ergodicity_check(FiniteChain(np.array([[0.75, 0.25], [0.25, 0.75]])))
    assert rep.second_eigenvalue_modulus == pytest.approx(0.5, abs=1e-14)
    assert rep.ergodic


def test_period_three_cycle():
    P = np.roll(np.eye(3), 1, axis=1)
    rep = ergodicity_check(FiniteChain(P))
    assert rep.period == 3 and not rep.aperiodic


@settings(max_examples=50, deadline=None)
@given(ergodic_chains(max_states=6))
def test_stationary_residual(chain):
    pi = stationary_dist(chain)
    assert abs(pi.sum() - 1) <= 1e-12
    assert np.abs(pi @ chain.transition - pi).max() <= 1e-12
    assert np.all(pi >= 0)


# --- M/M/1


def test_mm1_stationary_values():
    half = QueueChain(1 / 3)                       # load 1/2
    assert mm1_stationary(half, 0) == pytest.approx(0.5, rel=1e-14)
    q = QueueChain(0.8 / 1.8)                      # load 0.8
    assert q.load == pytest.approx(0.8, rel=1e-14)
    assert mm1_stationary(q, 2) == pytest.approx(0.128, rel=1e-12)
    assert mm1_stationary(QueueChain(1e-12), 0) == pytest.approx(1.0, abs=1e-11)
    assert mm1_stationary_mean(half) == pytest.approx(1.0, rel=1e-14)


def test_mm1_unstable():
    with pytest.raises(StabilityError):
        QueueChain(0.5)
    with pytest.raises(StabilityError):
        QueueChain(0.7)


def test_mm1_tail_mass():
    q = QueueChain(1 / 3, analysis_truncation=20)
    levels = np.arange(21)
    assert 1 - mm1_stationary(q, levels).sum() == pytest.approx(q.tail_mass(), rel=1e-10)


def test_truncated_section_is_stochastic():
    P = QueueChain(0.3).truncated(10).transition
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-15)


# --- sampling


def test_path_zero_horizon():
    s = ChainSampler(FiniteChain(np.full((3, 3), 1 / 3)), seed=5, initial=2)
    np.testing.assert_array_equal(sample_path(s, 0), [2])


@pytest.mark.parametrize("model", [FiniteChain(np.array([[0.9, 0.1], [0.4, 0.6]])),
                                   QueueChain(0.3)])
def test_path_determinism(model):
    a = sample_path(ChainSampler(model, 42, 0), 500)
    b = sample_path(ChainSampler(model, 42, 0), 500)
    c = sample_path(ChainSampler(model, 43, 0), 500)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("model", [FiniteChain(np.array([[0.9, 0.1], [0.4, 0.6]])),
                                   QueueChain(0.3)])
def test_batch_matches_single(model):
    seeds = [np.random.SeedSequence(7, spawn_key=(t,)) for t in range(5)]
    batch = sample_paths(model, seeds, 200, initial=1)
    for t, s in enumerate(seeds):
        np.testing.assert_array_equal(batch[t], sample_path(ChainSampler(model, s, 1), 200))


def test_sampler_advances():
    s = ChainSampler(FiniteChain(np.array([[0.9, 0.1], [0.4, 0.6]])), 3, 0)
    first = sample_path(s, 10)
    second = sample_path(s, 10)
    assert second[0] == first[-1]


def test_path_follows_support():
    P = np.array([[0.0, 1.0, 0.0], [0.0, 0.5, 0.5], [1.0, 0.0, 0.0]])
    path = sample_path(ChainSampler(FiniteChain(P), 11, 0), 2000)
    assert np.all(P[path[:-1], path[1:]] > 0)


def test_queue_steps_are_unit():
    path = sample_path(ChainSampler(QueueChain(0.4), 1, 0), 5000)
    steps = np.diff(path)
    assert np.all(np.abs(steps) <= 1)
    assert np.all(path >= 0)
    # a down move from 0 is a reflection: stays at 0
    stay = steps == 0
    assert np.all(path[:-1][stay] == 0)


def test_occupancy_clt_two_state():
    chain = FiniteChain(np.array([[0.75, 0.25], [0.25, 0.75]]))
    n = 10 ** 6
    path = sample_path(ChainSampler(chain, 2024, 0), n)
    occ = (path[1:] == 1).mean()
    # indicator 1{z=1} - 1/2 = -f/2 for f = (1, -1): asymptotic variance 3/4
    se = np.sqrt(0.75 / n)
    assert abs(occ - 0.5) <= 3 * se


def test_queue_occupancy_clt():
    q = QueueChain(1 / 3)
    n = 400_000
    path = sample_path(ChainSampler(q, 99, 0), n)[1:]
    for z in range(4):
        target = mm1_stationary(q, z)
        # crude band: batch-means standard error over 100 batches
        ind = (path == z).astype(float).reshape(100, -1).mean(axis=1)
        se = ind.std(ddof=1) / np.sqrt(100)
        assert abs(ind.mean() - target) <= 4 * se


def test_initial_distribution_draw():
    chain = FiniteChain(np.full((3, 3), 1 / 3))
    starts = [sample_path(ChainSampler(chain, s, [0.0, 0.0, 1.0]), 0)[0] for s in range(10)]
    assert set(starts) == {2}


@settings(max_examples=25, deadline=None)
@given(ergodic_chains(), st.integers(0, 2 ** 32), st.integers(0, 60))
def test_sampling_determinism_property(chain, seed, n):
    a = sample_path(ChainSampler(chain, seed, 0), n)
    b = sample_path(ChainSampler(chain, seed, 0), n)
    assert len(a) == n + 1
    np.testing.assert_array_equal(a, b)
