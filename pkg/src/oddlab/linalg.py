"""Small dense linear algebra helpers.

Everything works on float64 numpy arrays. Factorizations are delegated to
scipy; the iteration logic (power iteration, inverse iteration, pivot checks)
lives here so the tolerance contracts are explicit.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from oddlab.errors import NoConvergence, NotPositiveDefinite

MAX_POWER_ITERS = 10_000
PIVOT_RTOL = 1e-12


def _as_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise ValueError(f"expected a nonempty 2-d array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def gram(X) -> np.ndarray:
    """Column Gram matrix X^T X, symmetric bit for bit."""
    X = _as_matrix(X)
    G = X.T @ X
    upper = np.triu(G)
    return upper + np.triu(G, 1).T


def cholesky(G) -> np.ndarray:
    """Lower Cholesky factor with a relative pivot check.

    Raises NotPositiveDefinite if any squared pivot is at most
    1e-12 times the largest diagonal entry of G.
    """
    G = _as_matrix(G)
    if G.shape[0] != G.shape[1]:
        raise ValueError("cholesky needs a square matrix")
    scale = float(np.max(np.diag(G)))
    if scale <= 0:
        raise NotPositiveDefinite("nonpositive diagonal")
    try:
        L = sla.cholesky(G, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    piv = np.diag(L) ** 2
    if np.any(~np.isfinite(piv)) or np.min(piv) <= PIVOT_RTOL * scale:
        raise NotPositiveDefinite(
            f"pivot {np.min(piv):.3e} below {PIVOT_RTOL:g} * {scale:.3e}"
        )
    return L


def solve_spd(G, b) -> np.ndarray:
    """Solve G x = b for symmetric positive definite G."""
    G = _as_matrix(G)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (G.shape[0],):
        raise ValueError(f"rhs shape {b.shape} does not match {G.shape}")
    L = cholesky(G)
    return sla.cho_solve((L, True), b, check_finite=False)


def spectral_norm(M, tol: float = 1e-8) -> float:
    """Largest singular value by power iteration on M^T M.

    Starts from the normalized all-ones vector and stops once two successive
    estimates differ by less than tol times the current one.
    """
    M = _as_matrix(M)
    if tol <= 0:
        raise ValueError("tol must be positive")
    # the norm is homogeneous; scaling keeps M^T M away from under/overflow
    scale = float(np.max(np.abs(M))) if M.size else 0.0
    if scale == 0.0:
        return 0.0
    M = M / scale
    v = np.ones(M.shape[1]) / np.sqrt(M.shape[1])
    prev = 0.0
    for _ in range(MAX_POWER_ITERS):
        u = M.T @ (M @ v)
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            # start vector in the null space; fall back to a deterministic
            # basis sweep before declaring the matrix zero
            v = np.zeros_like(v)
            v[int(np.argmax(np.linalg.norm(M, axis=0)))] = 1.0
            continue
        est = np.sqrt(nrm)  # since ||v|| = 1, ||M^T M v|| -> sigma^2
        v = u / nrm
        if abs(est - prev) < tol * est:
            # Rayleigh quotient is a slightly sharper estimate
            return scale * float(np.linalg.norm(M @ v))
        prev = est
    raise NoConvergence(f"power iteration did not reach tol={tol} in {MAX_POWER_ITERS} steps")


def least_squares(A, b) -> np.ndarray:
    """Minimize ||A x - b|| via the normal equations.

    If A^T A is not numerically positive definite, a ridge of
    1e-12 * trace(A^T A) / cols is added to the diagonal.
    """
    A = _as_matrix(A)
    b = np.asarray(b, dtype=np.float64)
    if A.shape[0] < A.shape[1]:
        raise ValueError("least_squares needs rows >= cols")
    G = gram(A)
    rhs = A.T @ b
    try:
        return solve_spd(G, rhs)
    except NotPositiveDefinite:
        ridge = 1e-12 * np.trace(G) / G.shape[0]
        if ridge == 0.0:
            return np.zeros(A.shape[1])
        G = G + ridge * np.eye(G.shape[0])
        L = sla.cholesky(G, lower=True, check_finite=False)
        return sla.cho_solve((L, True), rhs, check_finite=False)


def min_singular_on_span(X, tol: float = 1e-8) -> float:
    """Smallest singular value of X (columns assumed independent).

    Inverse power iteration on X^T X using its Cholesky factor.
    """
    X = _as_matrix(X)
    L = cholesky(gram(X))
    n = L.shape[0]
    v = np.ones(n) / np.sqrt(n)
    prev = 0.0
    for _ in range(MAX_POWER_ITERS):
        u = sla.cho_solve((L, True), v, check_finite=False)
        nrm = np.linalg.norm(u)
        lam = 1.0 / nrm  # smallest eigenvalue estimate of X^T X
        v = u / nrm
        est = np.sqrt(lam)
        if abs(est - prev) < tol * est:
            return float(np.linalg.norm(X @ v))
        prev = est
    raise NoConvergence("inverse iteration did not converge")
