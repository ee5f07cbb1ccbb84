"""Elastic-net penalized Cox regression.

The objective, in the internally standardized coordinates, is

    nll(beta) / n + lam * sum_j f_j * (alpha * |beta_j| + (1 - alpha) * beta_j**2)

where ``nll`` is the negative log partial likelihood with Breslow ties and
``f_j`` are per-coefficient penalty factors (0 leaves a coefficient
unpenalized). It is minimized by proximal Newton: the partial likelihood is
replaced by its exact second-order expansion, and the penalized quadratic is
minimized by cyclic coordinate descent with soft-thresholding. Without an L1
part the quadratic subproblem is a linear solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .data import DomainError, SurvivalDataset

log = logging.getLogger(__name__)

__all__ = [
    "CoxFitError",
    "PenaltyConfig",
    "PenalizedCoxFit",
    "CVResult",
    "NestedCVResult",
    "cox_negloglik",
    "fit_penalized_cox",
    "fit_path",
    "lambda_path",
    "cv_lambda",
    "nested_cv",
    "breslow_baseline",
    "predict_survival",
    "kkt_violation",
    "make_folds",
]


class CoxFitError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Partial likelihood with Breslow ties
# --------------------------------------------------------------------------


class RiskSets:
    """Precomputed ordering and tie structure of (time, status)."""

    def __init__(self, time, status):
        time = np.asarray(time, dtype=np.float64)
        status = np.asarray(status, dtype=np.float64)
        self.n = len(time)
        self.order = np.argsort(time, kind="stable")
        self.time = time[self.order]
        self.status = status[self.order]
        ev = self.status > 0
        self.event_times, self.d = np.unique(self.time[ev], return_counts=True)
        self.d = self.d.astype(np.float64)
        # risk set of event time k = sorted rows start[k]:
        self.start = np.searchsorted(self.time, self.event_times, side="left")
        # number of event times <= t_i, per sorted row
        self.n_before = np.searchsorted(self.event_times, self.time, side="right")
        self.n_events = float(self.d.sum())

    def sorted_(self, a):
        return np.asarray(a)[self.order]


def _suffix_sum(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


def _nll_sorted(rs: RiskSets, eta_s):
    if rs.n_events == 0:
        return 0.0
    c = eta_s.max()
    S = _suffix_sum(np.exp(eta_s - c))[rs.start]
    return float(-(rs.status * eta_s).sum() + (rs.d * (np.log(S) + c)).sum())


def _derivs_sorted(rs: RiskSets, Xs, eta_s, hessian=True):
    """nll, gradient (d,) and Hessian (d, d) for rows already in sorted order."""
    if rs.n_events == 0:
        d = Xs.shape[1]
        return 0.0, np.zeros(d), np.zeros((d, d))
    c = eta_s.max()
    w = np.exp(eta_s - c)
    S = _suffix_sum(w)[rs.start]
    nll = float(-(rs.status * eta_s).sum() + (rs.d * (np.log(S) + c)).sum())
    hz = np.concatenate([[0.0], np.cumsum(rs.d / S)])  # Breslow cumulative hazard (scaled)
    wL = w * hz[rs.n_before]
    grad = Xs.T @ (wL - rs.status)
    if not hessian:
        return nll, grad, None
    wX = _suffix_sum(w[:, None] * Xs)[rs.start] / S[:, None]  # risk-set means
    H = (Xs.T * wL) @ Xs - (wX.T * rs.d) @ wX
    return nll, grad, 0.5 * (H + H.T)


def cox_negloglik(coef, X, surv: SurvivalDataset | tuple) -> float:
    """Negative log partial likelihood (Breslow ties); 0 without events."""
    time, status = _ts(surv)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(time):
        raise ValueError("X must be (n, d) with one row per subject")
    coef = np.asarray(coef, dtype=np.float64)
    if coef.shape != (X.shape[1],):
        raise ValueError("coef does not match the columns of X")
    rs = RiskSets(time, status)
    return _nll_sorted(rs, rs.sorted_(X @ coef))


def _ts(surv):
    if isinstance(surv, SurvivalDataset):
        return surv.time, surv.status
    time, status = surv
    return np.asarray(time, float), np.asarray(status, float)


# --------------------------------------------------------------------------
# Configuration and fit container
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PenaltyConfig:
    """Elastic-net settings. ``lambda_="auto"`` selects lambda by cross-validation."""

    alpha: float = 0.0
    lambda_: float | str = "auto"
    n_lambda: int = 100
    lambda_min_ratio: float | None = None
    penalty_factors: tuple[float, ...] | None = None
    folds: int = 10

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError("alpha must lie in [0, 1]")
        if self.lambda_ != "auto" and not (float(self.lambda_) >= 0):
            raise DomainError("lambda must be >= 0 or 'auto'")
        if self.penalty_factors is not None and any(f < 0 for f in self.penalty_factors):
            raise DomainError("penalty factors must be >= 0")


@dataclass(frozen=True, eq=False)
class PenalizedCoxFit:
    columns: tuple[str, ...]
    coef: np.ndarray  # original covariate scale
    coef_std: np.ndarray  # standardized scale (what the penalty sees)
    alpha: float
    lambda_: float
    center: np.ndarray
    scale: np.ndarray
    penalty_factors: np.ndarray
    baseline_times: np.ndarray
    baseline_hazard: np.ndarray  # Breslow increments at baseline_times
    train_lp: np.ndarray
    converged: bool = True
    cv: dict | None = field(default=None, repr=False)

    def linear_predictor(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.columns):
            raise DomainError(f"expected {len(self.columns)} covariates, got {X.shape[1]}")
        return (X - self.center) @ self.coef

    def cumulative_hazard(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=np.float64)
        H = np.concatenate([[0.0], np.cumsum(self.baseline_hazard)])
        return H[np.searchsorted(self.baseline_times, times, side="right")]

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "coef": self.coef.tolist(),
            "coef_std": self.coef_std.tolist(),
            "alpha": self.alpha,
            "lambda": self.lambda_,
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "penalty_factors": self.penalty_factors.tolist(),
            "baseline_hazard": {"times": self.baseline_times.tolist(), "increments": self.baseline_hazard.tolist()},
            "train_lp": self.train_lp.tolist(),
            "converged": self.converged,
            "cv": self.cv,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PenalizedCoxFit":
        a = lambda k: np.asarray(d[k], dtype=np.float64)  # noqa: E731
        return cls(tuple(d["columns"]), a("coef"), a("coef_std"), float(d["alpha"]), float(d["lambda"]),
                   a("center"), a("scale"), a("penalty_factors"),
                   np.asarray(d["baseline_hazard"]["times"], float), np.asarray(d["baseline_hazard"]["increments"], float),
                   a("train_lp"), bool(d["converged"]), d.get("cv"))


# --------------------------------------------------------------------------
# Solver
# --------------------------------------------------------------------------


@njit(cache=True)
def _cd_quadratic(H, g, beta0, beta, l1, l2, max_sweeps, tol):
    """Coordinate descent on g'(b - b0) + (b - b0)'H(b - b0)/2 + sum l1|b| + l2 b^2.

    Alternates full sweeps with inner sweeps restricted to the nonzero set,
    stopping once a full sweep changes nothing by more than ``tol``.
    """
    d = beta.shape[0]
    Hd = H @ (beta - beta0)
    act = np.empty(d, dtype=np.int64)
    sweeps = 0
    while sweeps < max_sweeps:
        # full sweep
        maxchg = 0.0
        for j in range(d):
            chg = _cd_update(H, g, Hd, beta, l1, l2, j)
            if chg > maxchg:
                maxchg = chg
        sweeps += 1
        if maxchg < tol:
            break
        m = 0
        for j in range(d):
            if beta[j] != 0.0:
                act[m] = j
                m += 1
        while sweeps < max_sweeps:
            maxchg = 0.0
            for t in range(m):
                chg = _cd_update(H, g, Hd, beta, l1, l2, act[t])
                if chg > maxchg:
                    maxchg = chg
            sweeps += 1
            if maxchg < tol:
                break
    return beta


@njit(cache=True)
def _cd_update(H, g, Hd, beta, l1, l2, j):
    hjj = H[j, j]
    denom = hjj + 2.0 * l2[j]
    if denom <= 1e-300:
        return 0.0
    z = hjj * beta[j] - (g[j] + Hd[j])
    if abs(z) <= l1[j]:
        new = 0.0
    elif z > 0:
        new = (z - l1[j]) / denom
    else:
        new = (z + l1[j]) / denom
    delta = new - beta[j]
    if delta == 0.0:
        return 0.0
    d = beta.shape[0]
    for i in range(d):
        Hd[i] += delta * H[i, j]
    beta[j] = new
    return abs(delta) * np.sqrt(denom)


def _prox_newton_direction(H, g, beta0, l1, l2, tol=1e-11):
    """Minimize the penalized quadratic model around ``beta0``.

    A short coordinate-descent run identifies the support and signs; the
    model restricted to that support is then solved exactly and accepted if
    it satisfies the optimality conditions. Otherwise coordinate descent
    continues from the better of the two points.
    """
    beta = _cd_quadratic(H, g, beta0, beta0.copy(), l1, l2, 30, tol)
    for _ in range(50):
        A = np.flatnonzero(beta)
        sign = np.sign(beta[A])
        cand = np.zeros_like(beta)
        if A.size:
            M = H[np.ix_(A, A)] + np.diag(2.0 * l2[A])
            rhs = H[A] @ beta0 - g[A] - l1[A] * sign
            try:
                cand[A] = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                cand = None
        if cand is not None and np.all(np.sign(cand[A]) == sign):
            grad = g + H @ (cand - beta0)
            inactive = np.ones(beta.size, dtype=bool)
            inactive[A] = False
            if np.all(np.abs(grad[inactive]) <= l1[inactive] * (1 + 1e-9) + 1e-14):
                return cand
        beta = _cd_quadratic(H, g, beta0, beta, l1, l2, 30, tol)
    return _cd_quadratic(H, g, beta0, beta, l1, l2, 100000, tol)


class _Problem:
    """Standardized design + risk sets shared by all fits on one dataset."""

    def __init__(self, X, time, status, factors):
        X = np.asarray(X, dtype=np.float64)
        if not np.all(np.isfinite(X)):
            raise DomainError("covariates must be finite")
        self.rs = RiskSets(time, status)
        n, d = X.shape
        self.n, self.d = n, d
        self.factors = np.ones(d) if factors is None else np.asarray(factors, dtype=np.float64)
        if self.factors.shape != (d,):
            raise DomainError("one penalty factor per column is required")
        self.center = X.mean(axis=0)
        sd = X.std(axis=0)
        self.active = sd > 1e-12 * np.maximum(1.0, np.abs(self.center))
        self.scale = np.where((self.factors > 0) & self.active, sd, 1.0)
        Z = (X - self.center) / self.scale
        self.Zs = self.rs.sorted_(Z[:, self.active])  # sorted rows, active columns
        self.f = self.factors[self.active]
        self.pen = self.f > 0

    def objective(self, beta, lam, alpha, nll=None):
        if nll is None:
            nll = _nll_sorted(self.rs, self.Zs @ beta)
        return nll / self.n + lam * float((self.f * (alpha * np.abs(beta) + (1 - alpha) * beta**2)).sum())

    def solve(self, lam, alpha, beta, max_iter=100, tol=None):
        """Proximal Newton from warm start ``beta``. Returns (beta, converged).

        Stops once a full step moves no coefficient by more than ``tol``;
        Newton's quadratic convergence leaves an error of order tol**2.
        """
        n = self.n
        l1 = lam * alpha * self.f
        l2 = lam * (1 - alpha) * self.f
        smooth = not np.any(l1 > 0)
        if tol is None:
            tol = 1e-5 if smooth else 1e-9
        nll, g, H = _derivs_sorted(self.rs, self.Zs, self.Zs @ beta)
        F = self.objective(beta, lam, alpha, nll)
        for _ in range(max_iter):
            g, H = g / n, H / n
            if smooth:
                A = H + np.diag(2.0 * l2)
                rhs = -(g + 2.0 * l2 * beta)
                try:
                    step = np.linalg.solve(A, rhs)
                except np.linalg.LinAlgError:
                    step = np.linalg.lstsq(A, rhs, rcond=None)[0]
                target = beta + step
            else:
                target = _prox_newton_direction(H, g, beta, l1, l2)
            direction = target - beta
            # backtracking on the exact objective
            t = 1.0
            for _ in range(60):
                cand = beta + t * direction
                nll_c = _nll_sorted(self.rs, self.Zs @ cand)
                F_c = self.objective(cand, lam, alpha, nll_c)
                if F_c <= F + 1e-15 * abs(F):
                    break
                t *= 0.5
            else:
                return beta, True  # no further decrease possible
            beta = cand
            done = np.max(np.abs(t * direction)) < tol or (F - F_c) < 1e-16 * max(1.0, abs(F))
            F = F_c
            if done:
                return beta, True
            if smooth and t == 1.0:
                # chord step with the previous Hessian: when it is already
                # below tol, the Newton step would be too (up to O(tol^2))
                nll, g, _ = _derivs_sorted(self.rs, self.Zs, self.Zs @ beta, hessian=False)
                try:
                    chord = np.linalg.solve(A, -(g / n + 2.0 * l2 * beta))
                except np.linalg.LinAlgError:
                    chord = None
                if chord is not None and np.max(np.abs(chord)) < tol:
                    cand = beta + chord
                    F_c = self.objective(cand, lam, alpha)
                    if F_c <= F:
                        return cand, True
                    return beta, True
            nll, g, H = _derivs_sorted(self.rs, self.Zs, self.Zs @ beta)
        return beta, False

    def unpenalized_start(self):
        """Fit unpenalized coordinates with all penalized ones at zero."""
        beta = np.zeros(int(self.active.sum()))
        if np.any(~self.pen):
            sub = _Problem.__new__(_Problem)
            sub.rs, sub.n = self.rs, self.n
            sub.Zs = self.Zs[:, ~self.pen]
            sub.f = self.f[~self.pen]
            sub.pen = self.pen[~self.pen]
            b, _ = sub.solve(0.0, 0.0, np.zeros(sub.Zs.shape[1]))
            beta[~self.pen] = b
        return beta

    def gradient(self, beta):
        _, g, _ = _derivs_sorted(self.rs, self.Zs, self.Zs @ beta, hessian=False)
        return g / self.n

    def lambda_max(self, alpha):
        beta = self.unpenalized_start()
        if not np.any(self.pen):
            return 1.0, beta
        g = self.gradient(beta)
        lm = float(np.max(np.abs(g[self.pen]) / self.f[self.pen])) / max(alpha, 1e-3)
        return (lm if lm > 0 else 1.0), beta

    def expand(self, beta_active):
        """Standardized coefficients on all columns and original-scale coefficients."""
        b = np.zeros(self.d)
        b[self.active] = beta_active
        return b, b / self.scale


def lambda_path(lam_max, n, d, n_lambda=100, min_ratio=None):
    if min_ratio is None:
        min_ratio = 1e-2 if n < d else 1e-3
    if n_lambda == 1:
        return np.array([lam_max])
    return lam_max * min_ratio ** (np.arange(n_lambda) / (n_lambda - 1))


def fit_path(X, surv, alpha, lambdas=None, penalty_factors=None, n_lambda=100, lambda_min_ratio=None,
             _problem=None):
    """Coefficients along a decreasing lambda path with warm starts.

    Returns ``(lambdas, coef_std (K, d), converged (K,))``.
    """
    time, status = _ts(surv)
    prob = _problem or _Problem(X, time, status, penalty_factors)
    if prob.rs.n_events == 0:
        raise CoxFitError("no events: the Cox model cannot be fitted")
    lm, beta = prob.lambda_max(alpha)
    if lambdas is None:
        lambdas = lambda_path(lm, prob.n, prob.d, n_lambda, lambda_min_ratio)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    out = np.zeros((len(lambdas), prob.d))
    conv = np.ones(len(lambdas), bool)
    prev = None
    smooth = alpha == 0 or not np.any(prob.pen)
    for k, lam in enumerate(lambdas):
        start = beta.copy()
        if smooth and prev is not None and k >= 1 and lambdas[k - 1] > 0 and lam > 0 and k >= 2:
            # linear extrapolation in log(lambda) from the two previous solutions
            r = np.log(lam / lambdas[k - 1]) / np.log(lambdas[k - 1] / lambdas[k - 2])
            start = beta + r * (beta - prev)
        prev = beta
        beta, conv[k] = prob.solve(float(lam), alpha, start)
        out[k] = prob.expand(beta)[0]
    return lambdas, out, conv


def kkt_violation(X, surv, coef_std, lam, alpha, penalty_factors=None) -> float:
    """Largest violation of the optimality conditions at standardized ``coef_std``."""
    time, status = _ts(surv)
    prob = _Problem(X, time, status, penalty_factors)
    b = np.asarray(coef_std, float)[prob.active]
    g = prob.gradient(b)
    f = prob.f
    ridge = 2.0 * lam * (1 - alpha) * f * b
    viol = np.empty_like(g)
    nz = b != 0
    viol[nz] = np.abs(g[nz] + ridge[nz] + lam * alpha * f[nz] * np.sign(b[nz]))
    viol[~nz] = np.maximum(np.abs(g[~nz]) - lam * alpha * f[~nz], 0.0)
    return float(viol.max()) if len(viol) else 0.0


def breslow_baseline(lp, surv):
    """Breslow estimate of the baseline hazard: (event times, increments)."""
    time, status = _ts(surv)
    rs = RiskSets(time, status)
    eta = rs.sorted_(np.asarray(lp, dtype=np.float64))
    S = _suffix_sum(np.exp(eta))[rs.start]
    return rs.event_times.copy(), rs.d / S


def fit_penalized_cox(X, surv: SurvivalDataset, config: PenaltyConfig = PenaltyConfig(), columns=None, seed=0,
                      lambdas=None) -> PenalizedCoxFit:
    """Fit the penalized Cox model at ``config.lambda_`` (cross-validated if "auto")."""
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DomainError("covariates must be finite")
    time, status = _ts(surv)
    if np.sum(status) == 0:
        raise CoxFitError("no events: the Cox model cannot be fitted")
    columns = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    prob = _Problem(X, time, status, config.penalty_factors)
    cv_info = None
    if config.lambda_ == "auto":
        cv = cv_lambda(X, surv, config.alpha, config.folds, seed, config=config, _problem=prob)
        lam = cv.lambda_star
        path_l = cv.lambdas[: cv.index + 1]
        cv_info = {"lambdas": cv.lambdas.tolist(), "cv_deviance": cv.curve.tolist(), "lambda_star": lam,
                   "folds": config.folds, "seed": seed}
    else:
        lam = float(config.lambda_)
        path_l = None
        if lambdas is not None:
            path_l = np.asarray(lambdas, float)
    if path_l is None:
        lm, _ = prob.lambda_max(config.alpha)
        full = lambda_path(lm, prob.n, prob.d, config.n_lambda, config.lambda_min_ratio)
        path_l = np.append(full[full > lam], lam)
    _, coefs, conv = fit_path(X, surv, config.alpha, path_l, _problem=prob)
    b_std = coefs[-1]
    b = b_std / prob.scale
    lp = (X - prob.center) @ b
    bt, bh = breslow_baseline(lp, surv)
    return PenalizedCoxFit(columns, b, b_std, config.alpha, lam, prob.center, prob.scale, prob.factors.copy(),
                           bt, bh, lp, bool(conv[-1]), cv_info)


def predict_survival(fit: PenalizedCoxFit, x_new, times) -> np.ndarray:
    """Survival probabilities S(t | x) = exp(-H0(t) exp(lp)); shape (m, len(times))."""
    if isinstance(x_new, Mapping):
        unknown = set(x_new) - set(fit.columns)
        if unknown:
            raise DomainError(f"unknown covariates {sorted(unknown)}")
        absent = [c for c in fit.columns if c not in x_new]
        if absent:
            raise DomainError(f"missing covariates {absent}")
        x_new = np.array([[x_new[c] for c in fit.columns]], dtype=np.float64)
    lp = fit.linear_predictor(x_new)
    H = fit.cumulative_hazard(np.asarray(times, float))
    with np.errstate(over="ignore"):
        return np.exp(-np.outer(np.exp(lp), H))


# --------------------------------------------------------------------------
# Cross-validation
# --------------------------------------------------------------------------


def make_folds(status, K, seed, max_retries=10):
    """Event-stratified fold labels; every fold must contain an event."""
    status = np.asarray(status)
    if K < 2:
        raise DomainError("at least 2 folds are required")
    ev = np.flatnonzero(status > 0)
    ce = np.flatnonzero(status == 0)
    for attempt in range(max_retries + 1):
        rng = np.random.default_rng([seed, attempt])
        labels = np.empty(len(status), dtype=np.int64)
        pe = rng.permutation(ev)
        pc = rng.permutation(ce)
        labels[pe] = np.arange(len(pe)) % K
        labels[pc] = (np.arange(len(pc)) + len(pe)) % K
        if all(status[labels == k].sum() > 0 and status[labels != k].sum() > 0 for k in range(K)):
            return labels
    raise CoxFitError(f"could not build {K} folds with events in every fold ({len(ev)} events)")


@dataclass(frozen=True, eq=False)
class CVResult:
    lambdas: np.ndarray
    curve: np.ndarray  # mean cross-validated deviance per lambda
    index: int

    @property
    def lambda_star(self) -> float:
        return float(self.lambdas[self.index])


def cv_lambda(X, surv, alpha, folds=10, seed=0, config: PenaltyConfig | None = None, _problem=None) -> CVResult:
    """Select lambda by K-fold cross-validated partial-likelihood deviance.

    Fold k contributes ``2 * (nll_all(b_k) - nll_train_k(b_k))`` where b_k is
    fitted without fold k; the curve is the sum over folds divided by the
    number of events.
    """
    config = config or PenaltyConfig(alpha=alpha)
    X = np.asarray(X, dtype=np.float64)
    time, status = _ts(surv)
    prob = _problem or _Problem(X, time, status, config.penalty_factors)
    lm, _ = prob.lambda_max(alpha)
    lambdas = lambda_path(lm, prob.n, prob.d, config.n_lambda, config.lambda_min_ratio)
    labels = make_folds(status, folds, seed)
    rs_all = RiskSets(time, status)
    total = np.zeros(len(lambdas))
    for k in range(folds):
        tr = labels != k
        sub = _Problem(X[tr], time[tr], status[tr], config.penalty_factors)
        _, coefs, _ = fit_path(None, (time[tr], status[tr]), alpha, lambdas, _problem=sub)
        # coefficients of the training fit, applied to every subject on the
        # training fold's standardization
        b_orig = coefs / sub.scale
        eta_all = (X - sub.center) @ b_orig.T  # (n, K)
        eta_tr = eta_all[tr]
        rs_tr = RiskSets(time[tr], status[tr])
        for j in range(len(lambdas)):
            total[j] += 2.0 * (_nll_sorted(rs_all, rs_all.sorted_(eta_all[:, j]))
                               - _nll_sorted(rs_tr, rs_tr.sorted_(eta_tr[:, j])))
    curve = total / max(float(status.sum()), 1.0)
    return CVResult(lambdas, curve, int(np.argmin(curve)))


@dataclass(frozen=True, eq=False)
class NestedCVResult:
    alpha_star: float
    lambda_star: float
    report: list[dict]
    outer_deviance: dict[float, float]
    final: CVResult


def nested_cv(X, surv, alpha_grid: Sequence[float] = tuple(np.round(np.arange(11) / 10, 1)), folds=10, seed=0,
              config: PenaltyConfig | None = None) -> NestedCVResult:
    """Choose alpha by outer cross-validation with lambda tuned in inner loops,
    then lambda for the chosen alpha by :func:`cv_lambda` on all data."""
    alpha_grid = [float(a) for a in alpha_grid]
    if not alpha_grid or any(not 0 <= a <= 1 for a in alpha_grid):
        raise DomainError("alpha grid must be a non-empty subset of [0, 1]")
    config = config or PenaltyConfig()
    X = np.asarray(X, dtype=np.float64)
    time, status = _ts(surv)
    labels = make_folds(status, folds, seed)
    rs_all = RiskSets(time, status)
    report = []
    outer = {a: 0.0 for a in alpha_grid}
    for k in range(folds):
        tr = labels != k
        inner_seed = int(np.random.default_rng([seed, 1000 + k]).integers(2**31))
        for a in alpha_grid:
            cfg = replace(config, alpha=a)
            sub = _Problem(X[tr], time[tr], status[tr], config.penalty_factors)
            cv = cv_lambda(X[tr], (time[tr], status[tr]), a, folds, inner_seed, config=cfg, _problem=sub)
            _, coefs, _ = fit_path(None, (time[tr], status[tr]), a, cv.lambdas[: cv.index + 1], _problem=sub)
            b = coefs[-1] / sub.scale
            eta = (X - sub.center) @ b
            rs_tr = RiskSets(time[tr], status[tr])
            dev = 2.0 * (_nll_sorted(rs_all, rs_all.sorted_(eta)) - _nll_sorted(rs_tr, rs_tr.sorted_(eta[tr])))
            outer[a] += dev
            report.append({"outer_fold": k, "alpha": a, "lambda_star": cv.lambda_star,
                           "lambdas": cv.lambdas.tolist(), "cv_deviance": cv.curve.tolist(), "outer_deviance": dev})
    alpha_star = min(alpha_grid, key=lambda a: (outer[a], alpha_grid.index(a)))
    final = cv_lambda(X, surv, alpha_star, folds, seed, config=replace(config, alpha=alpha_star))
    return NestedCVResult(alpha_star, final.lambda_star, report, outer, final)
