"""Independent reference computations used by the tests. Nothing here
imports the package's solvers."""

import itertools

import numpy as np


def brute_force_dual(X, tol=1e-9):
    """Hard-margin dual by enumerating support sets.

    For each subset S solve G_SS a = 1 with numpy; keep candidates with a >= 0
    and every margin >= 1. Among feasible KKT points the dual objective
    sum(a)/2 is maximal at the optimum. Returns (alpha, w_hat).
    """
    X = np.asarray(X, dtype=float)
    N = X.shape[1]
    G = X.T @ X
    best, best_val = None, -np.inf
    for k in range(1, N + 1):
        for S in itertools.combinations(range(N), k):
            S = list(S)
            GS = G[np.ix_(S, S)]
            if np.linalg.matrix_rank(GS) < k:
                continue
            a = np.linalg.solve(GS, np.ones(k))
            if np.any(a < -tol):
                continue
            alpha = np.zeros(N)
            alpha[S] = np.maximum(a, 0.0)
            w = X @ alpha
            if np.min(X.T @ w) < 1 - 1e-7:
                continue
            val = alpha.sum() - 0.5 * alpha @ G @ alpha
            if val > best_val + 1e-12:
                best, best_val = alpha, val
    if best is None:
        raise ValueError("no feasible support set")
    return best, X @ best


def central_diff(f, w, h=1e-6):
    """Central finite-difference gradient of a scalar function."""
    w = np.asarray(w, dtype=float)
    g = np.empty_like(w)
    for k in range(w.size):
        e = np.zeros_like(w)
        e[k] = h
        g[k] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def two_point_losses(B, K):
    """Loss values and probabilities when logits are (B, 0, ..., 0)."""
    lse = np.log(np.exp(B) + K - 1)
    return {lse - B: 1.0 / K, lse: (K - 1.0) / K}


def random_separable(rng, N, d):
    """Teacher-labelled Gaussian instance as signed columns (d x N)."""
    w = rng.standard_normal(d)
    X = rng.standard_normal((d, N))
    s = np.sign(w @ X)
    s[s == 0] = 1.0
    return X * s
