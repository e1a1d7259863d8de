"""Numerical checks of the implicit-bias statements on concrete runs.

Each verifier takes a trajectory (or a model and data), measures the relevant
quantity at every checkpoint, and returns a report with the measured values,
the tolerance used, and a pass flag. Limits in t or lambda are checked as a
trend plus a final tolerance at a finite horizon.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import softmax

from oddlab import fileio
from oddlab.errors import InsufficientCheckpoints, NoConvergence
from oddlab.linalg import gram, least_squares, solve_spd
from oddlab.models import check_homogeneity, gradient_matrix, per_example_class_gradients
from oddlab.svm import ALPHA_TOL, DualSolution

EULER_GAMMA = 0.5772156649015329
RATIO_TOL = 0.10
DECOMP_TOL = 0.2


def _support(dual: DualSolution) -> np.ndarray:
    S = np.array(dual.support_set, dtype=np.int64)
    return S[dual.alpha[S] > ALPHA_TOL]


def _report_dict(obj) -> dict:
    d = asdict(obj)
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}


# ---------------------------------------------------------------- loss ratios


@dataclass
class RatioReport:
    checkpoints: np.ndarray
    observed: np.ndarray  # (C, N) rows sum to 1
    predicted: np.ndarray  # (N,)
    max_rel_deviation: np.ndarray  # (C,) over support vectors
    support: np.ndarray
    tolerance: float = RATIO_TOL
    final_ok: bool = False
    shrinks: bool = False  # last < first
    monotone: bool = False  # non-increasing at every step
    passed: bool = False

    def to_dict(self):
        return _report_dict(self)

    def csv_rows(self):
        N = self.observed.shape[1]
        header = ["t", "max_rel_deviation"] + [f"ratio_{i}" for i in range(N)]
        rows = [(t, dev, *obs) for t, dev, obs in
                zip(self.checkpoints, self.max_rel_deviation, self.observed)]
        return header, rows


def verify_loss_ratio(traj, dual: DualSolution, tol: float = RATIO_TOL,
                      require_monotone: bool = True) -> RatioReport:
    """Compare l_i / sum_j l_j along a trajectory with alpha_i / sum_j alpha_j."""
    if len(traj.checkpoints) < 4:
        raise InsufficientCheckpoints(f"need >= 4 checkpoints, got {len(traj.checkpoints)}")
    L = traj.loss_matrix()
    obs = L / L.sum(axis=1, keepdims=True)
    pred = dual.alpha / dual.alpha.sum()
    S = _support(dual)
    dev = np.max(np.abs(obs[:, S] - pred[S]) / pred[S], axis=1)
    rep = RatioReport(traj.iterations, obs, pred, dev, S, tol)
    rep.final_ok = bool(dev[-1] <= tol)
    rep.shrinks = bool(dev[-1] < dev[0])
    rep.monotone = bool(np.all(np.diff(dev) <= 0))
    rep.passed = rep.final_ok and (rep.monotone if require_monotone else rep.shrinks)
    return rep


def corollary_bounds(margins) -> np.ndarray:
    """With z = exp(-m): z / ln(1 + z) lies in [1, 1 + z]. Checked elementwise."""
    m = np.asarray(margins, dtype=np.float64)
    z = np.exp(-m)
    loss = np.log1p(z)
    q = z / loss
    return (q >= 1.0) & (q <= 1.0 + z)


# ---------------------------------------------------------------- decomposition


@dataclass
class DecompositionReport:
    checkpoints: np.ndarray
    residuals: np.ndarray
    w_tilde: np.ndarray
    w_tilde_norm: float
    target_rel_error: float  # max over S of |exp(-y w~.x)/(alpha/eta) - 1|
    euler_gamma: float = EULER_GAMMA
    tolerance: float = DECOMP_TOL
    decreasing_late: bool = False
    final_ok: bool = False
    passed: bool = False

    def to_dict(self):
        return _report_dict(self)

    def csv_rows(self):
        return ["t", "residual"], list(zip(self.checkpoints, self.residuals))


def decomposition_offset(X_signed, dual: DualSolution, eta: float):
    """Minimum-norm w~ in span{y_i x_i : i in S} with y_i w~.x_i = ln(eta / alpha_i)."""
    S = _support(dual)
    XS = np.asarray(X_signed)[:, S]
    b = np.log(eta / dual.alpha[S])
    coef = least_squares(gram(XS), b)
    return XS @ coef, S


def span_projector(cols):
    """Orthogonal projector onto the column span (columns independent)."""
    G = gram(cols)
    return lambda v: cols @ solve_spd(G, cols.T @ v)


def verify_decomposition(traj, dual: DualSolution, eta: float, X_signed, K: int = 1,
                         tol: float = DECOMP_TOL) -> DecompositionReport:
    """Residual ||P(w_t) - ln(t/K) w_hat - w~|| at each checkpoint."""
    if len(traj.checkpoints) < 4:
        raise InsufficientCheckpoints(f"need >= 4 checkpoints, got {len(traj.checkpoints)}")
    X = np.asarray(X_signed, dtype=np.float64)
    w_t, S = decomposition_offset(X, dual, eta)
    P = span_projector(X[:, S])
    ts = traj.iterations
    res = np.array([np.linalg.norm(P(c.params) - math.log(c.t / K) * dual.w_hat - w_t)
                    for c in traj.checkpoints])
    achieved = np.exp(-(X[:, S].T @ w_t))
    target = dual.alpha[S] / eta
    terr = float(np.max(np.abs(achieved / target - 1.0)))
    nrm = float(np.linalg.norm(w_t))
    rep = DecompositionReport(ts, res, w_t, nrm, terr, tolerance=tol)
    late = res[len(res) // 2:]
    rep.decreasing_late = bool(np.all(np.diff(late) <= 0))
    rep.final_ok = bool(res[-1] <= tol * nrm)
    rep.passed = rep.decreasing_late and rep.final_ok
    return rep


# ---------------------------------------------------------------- separation


@dataclass
class SeparationReport:
    checkpoints: np.ndarray
    gap: np.ndarray  # min loss over mislabeled minus max loss over clean
    first_separation: int | None  # iteration T
    persistent_fraction: float
    required_fraction: float
    applicable: bool
    passed: bool

    def to_dict(self):
        return _report_dict(self)

    def csv_rows(self):
        return ["t", "gap"], list(zip(self.checkpoints, self.gap))


def verify_separation(traj, noise_mask, required_fraction: float = 0.5) -> SeparationReport:
    """Find the first checkpoint after which every mislabeled loss exceeds
    every clean loss. Passes if that tail covers required_fraction of the
    checkpoints."""
    mask = np.asarray(noise_mask, dtype=bool)
    ts = traj.iterations
    if mask.all() or not mask.any():
        return SeparationReport(ts, np.full(len(ts), np.nan), None, 0.0,
                                required_fraction, False, True)
    L = traj.loss_matrix()
    gap = L[:, mask].min(axis=1) - L[:, ~mask].max(axis=1)
    ok = gap > 0
    first = None
    if ok[-1]:
        k = len(ok) - 1
        while k > 0 and ok[k - 1]:
            k -= 1
        first = k
    frac = 0.0 if first is None else (len(ok) - first) / len(ok)
    T = None if first is None else int(ts[first])
    passed = first is not None and frac >= required_fraction
    return SeparationReport(ts, gap, T, frac, required_fraction, True, bool(passed))


# ---------------------------------------------------------------- alpha statements


@dataclass
class AlphaOrderingReport:
    min_mislabeled: float
    max_clean: float
    passed: bool


def verify_alpha_ordering(dual: DualSolution, noise_mask) -> AlphaOrderingReport:
    mask = np.asarray(noise_mask, dtype=bool)
    lo = float(dual.alpha[mask].min())
    hi = float(dual.alpha[~mask].max())
    return AlphaOrderingReport(lo, hi, lo > hi)


@dataclass
class AlphaSumReport:
    sqrt_sum: float
    lower: float
    upper: float
    passed: bool


def verify_alpha_sum_bounds(dual_or_alpha, m: int, n: int, lam: float) -> AlphaSumReport:
    alpha = getattr(dual_or_alpha, "alpha", dual_or_alpha)
    N, l2 = m + n, lam * lam
    core = math.sqrt((4 * m * n + l2 * N) / (l2 * (N + l2)))
    s = math.sqrt(float(np.sum(alpha)))
    return AlphaSumReport(s, 0.5 * core, 2.0 * core, 0.5 * core <= s <= 2.0 * core)


# ---------------------------------------------------------------- deep coefficients


def multiclass_margin(model, X, y) -> float:
    """min_i f(x_i)[y_i] - max_{j != y_i} f(x_i)[j]."""
    z = model.forward(X)
    rows = np.arange(len(y))
    zy = z[rows, y]
    z = z.copy()
    z[rows, y] = -np.inf
    return float(np.min(zy - z.max(axis=1)))


def beta_coefficients(logits, y) -> np.ndarray:
    """beta_{i,y_i} = 1 - p_{y_i}, beta_{i,j} = -p_j otherwise (p = softmax).

    The diagonal entry is computed as the sum of the other probabilities so
    that it stays accurate when p_{y_i} is close to 1.
    """
    p = softmax(np.asarray(logits, dtype=np.float64), axis=1)
    rows = np.arange(len(y))
    beta = -p
    others = p.copy()
    others[rows, y] = 0.0
    beta[rows, y] = others.sum(axis=1)
    return beta


def regularized_objective(model, X, y, lam):
    """Sum of cross-entropies plus lam ||w||^2, as a (value, grad) function of params."""

    def fun(w):
        f, g = model.with_params(w).loss_grad(X, y)
        return f + lam * w @ w, g + 2.0 * lam * w

    return fun


def _newton_polish(fun, w, target, max_iter=30):
    """Newton steps with a finite-difference Hessian of the analytic gradient,
    accepting a step only if it lowers the gradient norm."""
    n = w.size
    for _ in range(max_iter):
        _, g = fun(w)
        gn = np.linalg.norm(g)
        if gn <= target:
            break
        eps = 1e-6 * max(1.0, np.linalg.norm(w))
        H = np.empty((n, n))
        for k in range(n):
            dw = np.zeros(n)
            dw[k] = eps
            H[:, k] = (fun(w + dw)[1] - fun(w - dw)[1]) / (2 * eps)
        H = 0.5 * (H + H.T)
        step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while t > 1e-8:
            cand = w - t * step
            if np.linalg.norm(fun(cand)[1]) < gn:
                break
            t *= 0.5
        else:
            break
        w = cand
    return w


@dataclass
class StageRecord:
    lam: float
    grad_norm: float
    margin: float
    converged: bool


@dataclass
class DeepCoefficients:
    alpha_matrix: np.ndarray  # (N, K) least-squares fit
    residual: float  # relative fit residual ||G a - w|| / ||w||
    gamma_w: float  # margin of w_lambda
    degree: float
    alpha_from_beta: np.ndarray  # (N, K) stationarity prediction
    beta_row_sum_max: float
    fit_vs_beta: float  # max |fit - beta route| / max |beta route|
    row_sum_max: float
    sign_ok: bool
    loss_ratios: np.ndarray
    predicted_ratios: np.ndarray
    stages: list = field(default_factory=list)
    tolerance: float = 1e-3
    direction_note: str = ("w_lambda is assumed, not certified, to approach a "
                           "max-margin direction; these checks are consistency only")

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.stages)

    @property
    def passed(self) -> bool:
        return self.converged and self.row_sum_max <= self.tolerance and self.sign_ok

    def to_dict(self):
        d = _report_dict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        d["converged"] = self.converged
        d["passed"] = self.passed
        return d


def fit_regularized_path(model, X, y, lambda_seq, grad_tol=1e-6, warm_iters=500,
                         max_iter=20_000, polish_max_params=600):
    """Minimize sum CE + lam ||w||^2 for each lam (decreasing), warm-started.

    L-BFGS does the bulk of the work; a Newton polish finishes small models.
    Returns the final parameters and one StageRecord per lam.
    """
    w = model.params
    warm = regularized_objective(model, X, y, 0.0)
    w = minimize(warm, w, jac=True, method="L-BFGS-B",
                 options={"maxiter": warm_iters}).x
    stages = []
    for lam in lambda_seq:
        fun = regularized_objective(model, X, y, lam)
        w = minimize(fun, w, jac=True, method="L-BFGS-B",
                     options={"maxiter": max_iter, "gtol": grad_tol * 1e-3, "ftol": 0.0,
                              "maxcor": 30}).x
        # near lam -> 0 both gradient terms are O(lam ||w||), so the polish
        # target is relative to that scale as well as absolute
        target = min(grad_tol * 1e-3, 1e-10 * lam * np.linalg.norm(w))
        if w.size <= polish_max_params:
            w = _newton_polish(fun, w, target)
        gn = float(np.linalg.norm(fun(w)[1]))
        marg = multiclass_margin(model.with_params(w), X, y)
        stages.append(StageRecord(float(lam), gn, marg, gn <= grad_tol))
    return w, stages


def verify_deep_coefficients(net, ds, lambda_seq, tol: float = 1e-3, grad_tol: float = 1e-6,
                             strict: bool = False) -> DeepCoefficients:
    """Fit w_hat ~ sum_{i,j} alpha_ij grad f(x_i)[j] at the normalized regularized
    solution and compare with the softmax-derived coefficients."""
    X, y = ds.features, ds.labels
    N, K = X.shape[0], net.num_classes
    lambda_seq = sorted(lambda_seq, reverse=True)
    w, stages = fit_regularized_path(net, X, y, lambda_seq, grad_tol)
    if strict:
        for s in stages:
            if not s.converged:
                raise NoConvergence(f"lambda={s.lam:g}: gradient norm {s.grad_norm:.2e} > {grad_tol:g}")
    lam = lambda_seq[-1]
    model = net.with_params(w)
    gamma = multiclass_margin(model, X, y)
    hom = check_homogeneity(model, X[0])
    a = hom.degree
    if gamma <= 0:
        nan = np.full((N, K), np.nan)
        return DeepCoefficients(nan, math.nan, gamma, a, nan, math.nan, math.nan, math.inf,
                                False, np.full(N, np.nan), np.full(N, np.nan), stages, tol)
    r = gamma ** (1.0 / a)
    w_hat = w / r
    unit = net.with_params(w_hat)
    Gm = gradient_matrix(per_example_class_gradients(unit, X))
    coef = least_squares(Gm, w_hat)
    A = coef.reshape(N, K)
    resid = float(np.linalg.norm(Gm @ coef - w_hat) / np.linalg.norm(w_hat))

    beta = beta_coefficients(model.forward(X), y)
    A_beta = beta * r ** (a - 2.0) / (2.0 * lam)
    fit_vs_beta = float(np.max(np.abs(A - A_beta)) / np.max(np.abs(A_beta)))

    rows = np.arange(N)
    own = A[rows, y]
    off = A.copy()
    off[rows, y] = -np.inf
    sign_ok = bool(np.all(own >= -tol) and np.all(off.max(axis=1) <= tol))
    losses = model.per_example_losses(X, y)
    return DeepCoefficients(
        alpha_matrix=A, residual=resid, gamma_w=gamma, degree=a,
        alpha_from_beta=A_beta, beta_row_sum_max=float(np.max(np.abs(beta.sum(axis=1)))),
        fit_vs_beta=fit_vs_beta, row_sum_max=float(np.max(np.abs(A.sum(axis=1)))),
        sign_ok=sign_ok, loss_ratios=losses / losses.sum(),
        predicted_ratios=own / own.sum(), stages=stages, tolerance=tol,
    )


def dual_ratio_deviation(coeffs: DeepCoefficients, dual: DualSolution) -> float:
    """Max relative gap between the fitted own-class ratios and alpha_i / sum(alpha)
    over the support vectors; the linear-model cross-check."""
    S = _support(dual)
    pred = dual.alpha / dual.alpha.sum()
    return float(np.max(np.abs(coeffs.predicted_ratios[S] - pred[S]) / pred[S]))


def write_report(report, json_path, csv_path=None) -> None:
    fileio.write_json(json_path, report.to_dict())
    if csv_path is not None and hasattr(report, "csv_rows"):
        header, rows = report.csv_rows()
        fileio.write_csv(csv_path, header, rows)
