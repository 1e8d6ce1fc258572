"""Reference solvers kept independent of the package code paths."""

import numpy as np


def hinge_primal(theta, X, y, mu, c=None):
    c = np.ones(len(y)) if c is None else c
    return 0.5 * mu * theta @ theta + c @ np.maximum(0.0, 1.0 - y * (X @ theta))


def subgradient_svm(X, y, mu, iters=20000):
    """Batch subgradient descent with 1/(mu t) steps; returns the best iterate."""
    theta = np.zeros(X.shape[1])
    best, best_f = theta.copy(), hinge_primal(theta, X, y, mu)
    for t in range(1, iters + 1):
        active = y * (X @ theta) < 1
        g = mu * theta - (y[active, None] * X[active]).sum(axis=0)
        theta = theta - g / (mu * t)
        f = hinge_primal(theta, X, y, mu)
        if f < best_f:
            best, best_f = theta.copy(), f
    return best, best_f


def toy_problem(n=200, d=5, seed=123):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    X = rng.standard_normal((n, d))
    y = np.sign(X @ w + 0.5 * rng.standard_normal(n))
    return X, y
