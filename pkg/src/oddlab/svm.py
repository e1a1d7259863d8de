"""Hard-margin SVM through its dual, plus the closed-form reference
quantities for the label-flip construction.

Conventions: X_signed is d x N with columns y_i x_i, so the dual is
    max_{alpha >= 0}  sum(alpha) - 0.5 alpha^T G alpha,   G = X_signed^T X_signed
and the primal solution is w_hat = X_signed alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from oddlab.errors import (
    InvalidParams,
    NoConvergence,
    NotPositiveDefinite,
    NotSeparable,
    OddLabError,
    ZeroVector,
)
from oddlab.linalg import gram, solve_spd, spectral_norm

SUPPORT_TOL = 1e-6  # margin slack defining the support set
ALPHA_TOL = 1e-8  # alpha positivity threshold
KKT_TOL = 1e-10
MAX_PG_ITERS = 1_000_000
POLISH_EVERY = 50


@dataclass
class DualSolution:
    alpha: np.ndarray
    w_hat: np.ndarray
    gamma_star: float
    support_set: tuple
    theta: float
    solver: str  # "direct" or "projected_gradient"
    iterations: int = 0
    kkt_residual: float = 0.0

    def margins(self, X_signed):
        return np.asarray(X_signed).T @ self.w_hat

    def to_dict(self):
        return {
            "alpha": self.alpha.tolist(),
            "w_hat": self.w_hat.tolist(),
            "gamma_star": self.gamma_star,
            "support_set": [int(i) for i in self.support_set],
            "theta": self.theta,
            "solver": self.solver,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
        }


def kkt_residual(G, alpha) -> float:
    """Natural residual max_i |min(alpha_i, (G alpha)_i - 1)| of the dual LCP."""
    return float(np.max(np.abs(np.minimum(alpha, G @ alpha - 1.0))))


def _polish(G, alpha):
    """Solve exactly on candidate active sets; None if none of them is optimal.

    Candidates are the positive entries of alpha, then every prefix of the
    examples sorted by current margin. The prefixes catch coefficients that
    projected gradient only drives to zero slowly.
    """
    marg = G @ alpha
    order = np.argsort(marg, kind="stable")
    candidates = [np.flatnonzero(alpha > 0)] + [order[:k] for k in range(1, len(alpha) + 1)]
    for S in candidates:
        if S.size == 0:
            continue
        try:
            aS = solve_spd(G[np.ix_(S, S)], np.ones(S.size))
        except NotPositiveDefinite:
            continue
        if np.any(aS < 0):
            continue
        cand = np.zeros_like(alpha)
        cand[S] = aS
        if kkt_residual(G, cand) <= KKT_TOL:
            return cand
    return None


def _finish(X, G, alpha, solver, iters):
    w_hat = X @ alpha
    nrm = np.linalg.norm(w_hat)
    if nrm == 0.0:
        raise NotSeparable("dual solution gives w_hat = 0")
    margins = X.T @ w_hat
    S = np.flatnonzero(margins <= 1.0 + SUPPORT_TOL)
    rest = np.setdiff1d(np.arange(len(alpha)), S)
    theta = float(np.min(margins[rest])) if rest.size else math.inf
    return DualSolution(alpha, w_hat, 1.0 / nrm, tuple(int(i) for i in S), theta,
                        solver, iters, kkt_residual(G, alpha))


def separable(X_signed) -> bool:
    """True unless some convex combination of the columns is zero.

    By Gordan's alternative that is exactly strict separability through the
    origin. Checked as an LP feasibility problem.
    """
    X = np.asarray(X_signed, dtype=np.float64)
    N = X.shape[1]
    A_eq = np.vstack([X, np.ones((1, N))])
    b_eq = np.r_[np.zeros(X.shape[0]), 1.0]
    res = linprog(np.zeros(N), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return res.status == 2  # infeasible


def solve_dual(X_signed) -> DualSolution:
    """Max-margin dual. Tries the all-support linear system first, then
    projected gradient ascent with periodic exact solves on the active set."""
    X = np.asarray(X_signed, dtype=np.float64)
    if X.ndim != 2 or np.any(np.linalg.norm(X, axis=0) == 0):
        raise InvalidParams("columns of X_signed must be nonzero")
    G = gram(X)
    N = G.shape[0]
    try:
        alpha = solve_spd(G, np.ones(N))
        if np.all(alpha > 0):
            return _finish(X, G, alpha, "direct", 0)
    except NotPositiveDefinite:
        pass
    if not separable(X):
        raise NotSeparable("a convex combination of the signed columns is zero")

    step = 1.0 / spectral_norm(G, 1e-10)
    alpha = np.zeros(N)
    for it in range(1, MAX_PG_ITERS + 1):
        alpha = np.maximum(alpha + step * (1.0 - G @ alpha), 0.0)
        if not np.all(np.isfinite(alpha)) or np.linalg.norm(alpha) > 1e12:
            raise NotSeparable("dual iterates diverge; data are not linearly separable")
        if it % POLISH_EVERY == 0:
            cand = _polish(G, alpha)
            if cand is not None:
                return _finish(X, G, cand, "projected_gradient", it)
        if kkt_residual(G, alpha) <= KKT_TOL:
            return _finish(X, G, alpha, "projected_gradient", it)
    raise NoConvergence(f"projected gradient hit {MAX_PG_ITERS} iterations")


def dual_objective(G, alpha) -> float:
    return float(np.sum(alpha) - 0.5 * alpha @ G @ alpha)


def margin_of(w, ds) -> float:
    """Normalized margin min_i y_i w.x_i / ||w|| on a binary dataset."""
    w = np.asarray(w, dtype=np.float64)
    nrm = np.linalg.norm(w)
    if nrm == 0.0:
        raise ZeroVector("margin of the zero vector is undefined")
    return float(np.min(ds.signs * (ds.features @ w)) / nrm)


# ---------------------------------------------------------------- flip construction


@dataclass
class Theorem1Reference:
    m: int
    n: int
    N: int
    lam: float
    A: np.ndarray
    A_inv: np.ndarray
    c: np.ndarray
    epsilon: float
    groups: np.ndarray = field(repr=False)  # +1 clean, -1 mislabeled

    @property
    def a_inv_inf_norm(self) -> float:
        l2 = self.lam**2
        return (2 * self.N - 2 + l2) / (l2 * (self.N + l2))

    @property
    def alpha_c_bound(self) -> float:
        l2 = self.lam**2
        return min(2 * self.n + l2, self.m - self.n) / (l2 * (self.N + l2))

    @property
    def sqrt_sum_bounds(self) -> tuple:
        l2 = self.lam**2
        core = math.sqrt((4 * self.m * self.n + l2 * self.N) / (l2 * (self.N + l2)))
        return 0.5 * core, 2.0 * core

    @property
    def sigma_max_bound(self) -> float:
        return math.sqrt(self.N + 2 * self.lam**2)

    @property
    def gamma_upper(self) -> float:
        l2 = self.lam**2
        return 2.0 * math.sqrt(l2 * (self.N + l2) / (4 * self.m * self.n + l2 * self.N))


def reference_matrices(groups, lam):
    """A, closed-form A^{-1} and c for a given clean(+1)/mislabeled(-1) pattern."""
    s = np.asarray(groups, dtype=np.float64)
    N = s.size
    l2 = lam * lam
    same = np.outer(s, s)
    A = l2 * np.eye(N) + same
    k = 1.0 / (l2 * (N + l2))
    A_inv = -k * same
    A_inv[np.diag_indices(N)] = 1.0 / l2 - k
    m = int(np.sum(s > 0))
    n = N - m
    c = np.where(s > 0, (2 * n + l2) * k, (2 * m + l2) * k)
    return A, A_inv, c


def theorem1_reference(m: int, n: int, lam: float, groups=None) -> Theorem1Reference:
    """Reference quantities with clean examples first unless a group pattern is given."""
    if not (m > n >= 1) or not lam > 0:
        raise InvalidParams(f"need m > n >= 1 and lam > 0 (got m={m}, n={n}, lam={lam})")
    if groups is None:
        groups = np.r_[np.ones(m), -np.ones(n)]
    groups = np.asarray(groups, dtype=np.float64)
    if int(np.sum(groups > 0)) != m or groups.size != m + n:
        raise InvalidParams("group pattern does not match m and n")
    N = m + n
    A, A_inv, c = reference_matrices(groups, lam)
    l2 = lam * lam
    eps = ((N + l2) / (2 * (2 * N - 2 + l2) * N)) * (min(2 * n + l2, m - n) / (2 * m + l2))
    if np.max(np.abs(A @ A_inv - np.eye(N))) > 1e-10:
        raise OddLabError("closed-form inverse failed A A^-1 = I")
    if np.max(np.abs(A @ c - 1.0)) > 1e-12:
        raise OddLabError("closed-form c failed A c = 1")
    return Theorem1Reference(m, n, N, lam, A, A_inv, c, eps, groups)


def required_dimension(m: int, n: int, lam: float, delta: float) -> int:
    """Dimension at which the concentration bound holds with prob. 1 - delta."""
    N = m + n
    l2 = lam * lam
    ratio = N * (m + l2) / min(2 * n + l2, m - n)
    return int(math.ceil(2000.0 * ratio**2 * math.log(N / delta)))


@dataclass
class ConcentrationReport:
    max_gram_deviation: float
    gram_tolerance: float
    gram_ok: bool
    sigma_max: float
    sigma_bound: float
    sigma_ok: bool
    alpha_c_deviation: float
    alpha_c_bound: float
    alpha_ok: bool

    @property
    def passed(self) -> bool:
        return self.gram_ok and self.sigma_ok and self.alpha_ok


def concentration_check(ds, ref: Theorem1Reference | None = None, dual: DualSolution | None = None):
    """Compare a sampled flip-construction dataset against its reference."""
    lam = ds.meta.get("lam") if ref is None else ref.lam
    groups = np.where(ds.noise_mask, -1.0, 1.0)
    m, n = int(np.sum(groups > 0)), int(np.sum(groups < 0))
    ref = theorem1_reference(m, n, lam, groups)
    X = ds.signed_columns()
    G = gram(X)
    dev = float(np.max(np.abs(G - ref.A)))
    tol = ref.epsilon * lam**2
    sig = spectral_norm(X, 1e-8)
    if dual is None:
        dual = solve_dual(X)
    a_dev = float(np.max(np.abs(dual.alpha - ref.c)))
    return ConcentrationReport(dev, tol, dev <= tol, sig, ref.sigma_max_bound,
                               sig <= ref.sigma_max_bound, a_dev, ref.alpha_c_bound,
                               a_dev < ref.alpha_c_bound)
