import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from markovsa.chain import FiniteChain


@pytest.fixture
def two_state():
    return FiniteChain(np.array([[0.75, 0.25], [0.25, 0.75]]))


@pytest.fixture
def pm_one():
    return np.array([1.0, -1.0])


@pytest.fixture
def three_state():
    return FiniteChain(np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]]))


@st.composite
def ergodic_chains(draw, min_states=2, max_states=4):
    """Strictly positive rows, hence irreducible and aperiodic."""
    S = draw(st.integers(min_states, max_states))
    W = draw(arrays(np.float64, (S, S), elements=st.floats(0.05, 1.0)))
    return FiniteChain(W / W.sum(axis=1, keepdims=True))


@st.composite
def state_functions(draw, num_states, d=1):
    return draw(arrays(np.float64, (num_states, d), elements=st.floats(-3.0, 3.0)))


@st.composite
def chains_with_noise(draw, max_states=4, max_dim=2):
    chain = draw(ergodic_chains(max_states=max_states))
    d = draw(st.integers(1, max_dim))
    F = draw(state_functions(chain.num_states, d))
    return chain, F


@st.composite
def hurwitz_matrices(draw, d, margin=0.0):
    """A = -(c I + M M^T) - K with K skew: eigenvalue real parts <= -c."""
    c = draw(st.floats(margin + 0.05, margin + 2.0))
    M = draw(arrays(np.float64, (d, d), elements=st.floats(-1.0, 1.0)))
    K = draw(arrays(np.float64, (d, d), elements=st.floats(-1.0, 1.0)))
    return -(c * np.eye(d) + M @ M.T) - (K - K.T)
