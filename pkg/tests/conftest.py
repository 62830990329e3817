import numpy as np
import pytest

from traceforms.chain import validate_chain


def c1_chain():
    """Conservative three-state chain: rates 1 and 2 out of state 0."""
    Q = np.array([
        [-3.0, 1.0, 2.0],
        [1.0, -1.0, 0.0],
        [2.0, 0.0, -2.0],
    ])
    return validate_chain(Q, np.ones(3))


def c2_chain():
    """C1 plus unit killing at state 0."""
    Q = np.array([
        [-4.0, 1.0, 2.0],
        [1.0, -1.0, 0.0],
        [2.0, 0.0, -2.0],
    ])
    return validate_chain(Q, np.ones(3))


def random_chain(rng, n=None, kill=True):
    """Random irreducible symmetric chain from a conductance matrix.

    Conductances c(x,y) = c(y,x) >= 0 with a connected support graph;
    Q(x,y) = c(x,y)/m(x) gives detailed balance exactly in floating point.
    """
    if n is None:
        n = int(rng.integers(3, 41))
    m = rng.uniform(0.5, 2.0, size=n)
    c = np.zeros((n, n))
    # random spanning tree keeps the chain irreducible
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = order[k], order[int(rng.integers(0, k))]
        c[a, b] = c[b, a] = rng.uniform(0.2, 2.0)
    extra = rng.random((n, n)) < 0.3
    vals = rng.uniform(0.1, 1.5, size=(n, n))
    iu = np.triu_indices(n, 1)
    for a, b in zip(*iu):
        if extra[a, b]:
            c[a, b] = c[b, a] = vals[a, b]
    Q = c / m[:, None]
    kill_rate = np.zeros(n)
    if kill:
        sel = rng.random(n) < 0.4
        kill_rate[sel] = rng.uniform(0.1, 1.0, size=int(sel.sum()))
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -(Q.sum(axis=1) + kill_rate))
    return validate_chain(Q, m)


def random_subset(rng, n):
    k = int(rng.integers(1, n))
    return tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))


@pytest.fixture
def c1():
    return c1_chain()


@pytest.fixture
def c2():
    return c2_chain()
