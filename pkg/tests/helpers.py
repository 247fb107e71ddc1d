"""Small builders shared by the test modules."""

import numpy as np

from stsketch.tensor import KruskalModel, MaskTensor, SparseTensor


def random_model(rng, dims, rank, weights=False):
    A, B, C = (rng.normal(size=(n, rank)) for n in dims)
    w = rng.uniform(0.5, 2.0, rank) if weights else None
    return KruskalModel(A, B, C, w)


def random_sparse(rng, dims, density=0.3):
    X = rng.normal(size=dims) * (rng.random(dims) < density)
    subs = np.argwhere(X != 0)
    return SparseTensor(dims, subs, X[tuple(subs.T)]), X


def random_slice_mask(rng, dims, keep=0.6):
    keep_t = [t for t in range(dims[0]) if rng.random() < keep] or [0]
    return MaskTensor(dims, frozenset(keep_t))


def dense_slices(X, mask):
    """Sketch holding every cell of the observed slices of a dense array."""
    subs = mask.observed_subs()
    return SparseTensor(X.shape, subs, X[tuple(subs.T)])


def ar_series(coef, n, sigma, rng, c=0.0, burn=300):
    coef = np.asarray(coef, dtype=float)
    p = len(coef)
    x = np.zeros(n + burn)
    e = rng.normal(0, sigma, n + burn)
    for t in range(p, n + burn):
        x[t] = c + coef @ x[t - p:t][::-1] + e[t]
    return x[burn:]
