"""Maximum likelihood fitting and random-effect prediction for the two
longitudinal models.

LMM (one item)::

    y_ij = b0 + b_0i + (b1 + b_1i) a_ij + e_ij,     (b_0i, b_1i) ~ N(0, D)

MLPMM (r items of one latent process)::

    y_qij = b_q0 + u_0i + b_qi + (b_q1 + u_1i) a_ij + e_qij
    (u_0i, u_1i) ~ N(0, Sigma_u),  Sigma_u[0, 0] = 1
    b_qi ~ N(0, s2_b[q]),  e_qij ~ N(0, s2_e[q])

Covariance matrices are optimized through Cholesky factors with
log-transformed diagonals, variances through their logs; the fixed effects
are profiled out by generalized least squares at every evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from ..data import DomainError, LongitudinalDataset
from . import _gaussian as gauss

log = logging.getLogger(__name__)

__all__ = [
    "FitError",
    "OptimizerConfig",
    "LmmFit",
    "MlpmmFit",
    "fit_lmm",
    "fit_mlpmm",
    "lmm_loglik",
    "mlpmm_loglik",
    "predict_ranef_lmm",
    "predict_ranef_mlpmm",
    "stats_for",
]


class FitError(RuntimeError):
    """A mixed model could not be fitted to the supplied data."""


@dataclass(frozen=True)
class OptimizerConfig:
    max_iter: int = 500
    rel_tol: float = 1e-8
    grad_tol: float = 1e-5
    variance_floor: float = 1e-8
    variance_ceiling: float = 1e8


def stats_for(data: LongitudinalDataset, items: Sequence[str], drop_empty=True) -> gauss.ProcessStats:
    cols = data.item_index(items)
    return gauss.process_stats(
        data.subject_index(), data.age, data.values[:, cols], data.n_subjects, data.subject_ids, drop_empty
    )


def _psd_factor(S: np.ndarray) -> np.ndarray:
    """Some L with L L^T = S for a PSD matrix S (lower Cholesky when possible)."""
    S = np.asarray(S, dtype=np.float64)
    S = 0.5 * (S + S.T)
    w, Q = np.linalg.eigh(S)
    tol = 1e-10 * max(1.0, float(np.abs(w).max()))
    if w.min() < -tol:
        raise DomainError("covariance matrix is not positive semi-definite")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return Q * np.sqrt(np.clip(w, 0.0, None))


def _check_variance(s2, name):
    s2 = np.atleast_1d(np.asarray(s2, dtype=np.float64))
    if np.any(~np.isfinite(s2)) or np.any(s2 <= 0):
        raise DomainError(f"{name} must be > 0")
    return s2


# --------------------------------------------------------------------------
# Fit containers
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LmmFit:
    """Fitted LMM for one item. ``chol`` is a factor of D (D = chol chol^T)."""

    item: str
    beta: np.ndarray
    chol: np.ndarray
    sigma2_eps: float
    loglik: float
    converged: bool
    n_iter: int = 0
    trace: tuple[float, ...] = field(default=(), repr=False)

    kind = "lmm"

    @property
    def D(self) -> np.ndarray:
        return self.chol @ self.chol.T

    @classmethod
    def from_components(cls, item, beta, D, sigma2_eps, loglik=float("nan"), converged=True):
        return cls(item, np.asarray(beta, float), _psd_factor(D), float(_check_variance(sigma2_eps, "sigma2_eps")[0]), loglik, converged)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "item": self.item,
            "beta": self.beta.tolist(),
            "chol": self.chol.tolist(),
            "D": self.D.tolist(),
            "sigma2_eps": self.sigma2_eps,
            "loglik": self.loglik,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "constraints": {"sigma2_floor": OptimizerConfig.variance_floor},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LmmFit":
        return cls(d["item"], np.asarray(d["beta"], float), np.asarray(d["chol"], float), float(d["sigma2_eps"]),
                   float(d["loglik"]), bool(d["converged"]), int(d.get("n_iter", 0)))


@dataclass(frozen=True, eq=False)
class MlpmmFit:
    """Fitted MLPMM for the items of one latent process.

    ``chol_u`` is the lower Cholesky factor of Sigma_u with ``chol_u[0, 0] == 1``.
    """

    process: str
    items: tuple[str, ...]
    beta: np.ndarray  # (r, 2)
    chol_u: np.ndarray  # (2, 2)
    sigma2_b: np.ndarray  # (r,)
    sigma2_eps: np.ndarray  # (r,)
    loglik: float
    converged: bool
    n_iter: int = 0
    trace: tuple[float, ...] = field(default=(), repr=False)

    kind = "mlpmm"

    @property
    def Sigma_u(self) -> np.ndarray:
        return self.chol_u @ self.chol_u.T

    @property
    def r(self) -> int:
        return len(self.items)

    @property
    def chol(self) -> np.ndarray:
        k = 2 + self.r
        L = np.zeros((k, k))
        L[:2, :2] = self.chol_u
        L[2:, 2:] = np.diag(np.sqrt(self.sigma2_b))
        return L

    @classmethod
    def from_components(cls, process, items, beta, Sigma_u, sigma2_b, sigma2_eps, loglik=float("nan"), converged=True):
        Sigma_u = np.asarray(Sigma_u, float)
        if Sigma_u[0, 0] != 1.0:
            raise DomainError("Sigma_u[0, 0] must equal 1")
        Lu = _psd_factor(Sigma_u)
        if Lu[0, 1] != 0.0:  # eigen factor; rebuild a lower one by hand
            l10 = Sigma_u[1, 0]
            Lu = np.array([[1.0, 0.0], [l10, np.sqrt(max(Sigma_u[1, 1] - l10**2, 0.0))]])
        sb = np.asarray(sigma2_b, float)
        if np.any(sb < 0):
            raise DomainError("sigma2_b must be >= 0")
        return cls(process, tuple(items), np.asarray(beta, float).reshape(-1, 2), Lu, sb,
                   _check_variance(sigma2_eps, "sigma2_eps"), loglik, converged)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "process": self.process,
            "items": list(self.items),
            "beta": self.beta.tolist(),
            "chol_u": self.chol_u.tolist(),
            "Sigma_u": self.Sigma_u.tolist(),
            "sigma2_b": self.sigma2_b.tolist(),
            "sigma2_eps": self.sigma2_eps.tolist(),
            "loglik": self.loglik,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "constraints": {"Sigma_u[0,0]": 1.0, "sigma2_floor": OptimizerConfig.variance_floor},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpmmFit":
        return cls(d["process"], tuple(d["items"]), np.asarray(d["beta"], float), np.asarray(d["chol_u"], float),
                   np.asarray(d["sigma2_b"], float), np.asarray(d["sigma2_eps"], float), float(d["loglik"]),
                   bool(d["converged"]), int(d.get("n_iter", 0)))


# --------------------------------------------------------------------------
# Parameterizations: theta <-> (L, sigma2) and gradient chain rule
# --------------------------------------------------------------------------


def _lmm_unpack(theta):
    L = np.array([[np.exp(theta[0]), 0.0], [theta[1], np.exp(theta[2])]])
    return L, np.exp(theta[3:4])


def _lmm_chain(theta, L, sigma2, dG, dsigma2):
    dL = 2.0 * dG @ L
    return np.array([dL[0, 0] * L[0, 0], dL[1, 0], dL[1, 1] * L[1, 1], dsigma2[0] * sigma2[0]])


def _mlpmm_unpack(theta, r):
    k = 2 + r
    L = np.zeros((k, k))
    L[0, 0] = 1.0
    L[1, 0] = theta[0]
    L[1, 1] = np.exp(theta[1])
    s2b = np.exp(theta[2 : 2 + r])
    L[2:, 2:] = np.diag(np.sqrt(s2b))
    return L, np.exp(theta[2 + r : 2 + 2 * r]), s2b


def _mlpmm_chain(theta, L, s2b, sigma2, dG, dsigma2):
    r = len(sigma2)
    dL = 2.0 * dG[:2, :2] @ L[:2, :2]
    g = np.empty(2 + 2 * r)
    g[0] = dL[1, 0]
    g[1] = dL[1, 1] * L[1, 1]
    g[2 : 2 + r] = np.diagonal(dG)[2:] * s2b
    g[2 + r :] = dsigma2 * sigma2
    return g


def _validate_stats(stats: gauss.ProcessStats, names: Sequence[str]):
    per_item = stats.cnt.sum(axis=0)
    for q, name in enumerate(names):
        if per_item[q] == 0:
            raise FitError(f"item {name!r} has no observations")
    if stats.n < 2:
        raise FitError(f"{names}: at least 2 subjects with observations are required")
    for q, name in enumerate(names):
        nq = per_item[q]
        mean_a = stats.sa[:, q].sum() / nq
        var_a = stats.saa[:, q].sum() / nq - mean_a**2
        if not var_a > 1e-12 * max(1.0, mean_a**2):
            raise FitError(f"item {name!r}: all ages are equal, slopes are not identifiable")
    if not np.any(stats.cnt.max(axis=1) >= 2):
        raise FitError(f"{names}: no subject has repeated measurements, slope variance is not identifiable")


def _pooled_ols(stats: gauss.ProcessStats):
    """Per-item OLS fixed effects and residual variance pooling all rows."""
    M = stats.M.sum(axis=0)
    m = stats.m.sum(axis=0)
    beta = np.linalg.solve(M, m[..., None])[..., 0]
    n = stats.cnt.sum(axis=0)
    syy = stats.syy.sum(axis=0)
    rss = syy - 2.0 * (m * beta).sum(-1) + np.einsum("qa,qab,qb->q", beta, M, beta)
    var = np.maximum(rss / np.maximum(n - 2, 1), 1e-6)
    mean_a2 = stats.saa.sum(axis=0) / n
    return beta, var, mean_a2


def _optimize(objective, theta0, bounds, config: OptimizerConfig, restarts: int = 3):
    """L-BFGS-B with restarts.

    In narrow curved valleys (ages far from zero make the intercept/slope
    covariance direction very stiff) L-BFGS-B can stop on its relative
    decrease test with a clearly non-zero gradient. A fresh start from the
    last iterate discards the stale curvature pairs and usually finishes
    the descent. Restarts share the ``max_iter`` budget.
    """
    trace: list[float] = []

    def cb(xk):
        trace.append(float(objective(xk)[0]))

    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    x = np.asarray(theta0, dtype=np.float64)
    trace.append(float(objective(x)[0]))
    nit, converged, success = 0, False, False
    for _ in range(restarts + 1):
        start = len(trace)
        res = optimize.minimize(
            objective,
            x,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=cb,
            options={"maxiter": max(config.max_iter - nit, 1), "ftol": 1e-13, "gtol": config.grad_tol * 0.1,
                     "maxcor": 20},
        )
        nit += int(res.nit)
        x, success = res.x, bool(res.success)
        _, g = objective(x)
        pg = np.where((x <= lo) & (g > 0) | (x >= hi) & (g < 0), 0.0, g)
        rel = abs(trace[-2] - trace[-1]) / max(abs(trace[-1]), 1.0) if len(trace) > 1 else np.inf
        converged = bool(np.max(np.abs(pg)) < config.grad_tol and (rel < config.rel_tol or success)
                         and nit < config.max_iter)
        if converged or nit >= config.max_iter or len(trace) == start:
            break
    return x, converged, nit, tuple(trace)


def _bounds(config: OptimizerConfig, kinds):
    lv, hv = np.log(config.variance_floor), np.log(config.variance_ceiling)
    out = []
    for kind in kinds:
        if kind == "logvar":
            out.append((lv, hv))
        elif kind == "logchol":
            out.append((0.5 * lv, 0.5 * hv))
        else:
            out.append((-1e4, 1e4))
    return out


# --------------------------------------------------------------------------
# LMM
# --------------------------------------------------------------------------


def lmm_loglik(beta, D, sigma2_eps, data, item: str | None = None, per_subject=False):
    """Marginal Gaussian log-likelihood of the LMM.

    ``data`` is a :class:`LongitudinalDataset` (with ``item``) or
    precomputed :class:`ProcessStats`.
    """
    stats = data if isinstance(data, gauss.ProcessStats) else stats_for(data, [item])
    L = _psd_factor(D)
    s2 = _check_variance(sigma2_eps, "sigma2_eps")
    return gauss.loglik(stats, np.asarray(beta, float).reshape(1, 2), L, s2, False, per_subject=per_subject)


def fit_lmm(data: LongitudinalDataset | gauss.ProcessStats, item: str | None = None,
            config: OptimizerConfig | None = None) -> LmmFit:
    """Maximum likelihood fit of the random intercept + slope LMM for one item."""
    config = config or OptimizerConfig()
    stats = data if isinstance(data, gauss.ProcessStats) else stats_for(data, [item])
    item = item if item is not None else "item"
    _validate_stats(stats, [item])
    # optimize around the mean age: the likelihood is invariant to the age
    # origin, but ages far from zero make intercept and slope nearly collinear
    c = float(stats.sa.sum() / stats.cnt.sum())
    raw, stats = stats, gauss.shift_ages(stats, c)
    beta0, var, mean_a2 = _pooled_ols(stats)
    v, a2 = float(var[0]), float(max(mean_a2[0], 1e-12))
    theta0 = np.array([0.5 * np.log(v / 4), 0.0, 0.5 * np.log(v / (4 * a2)), np.log(v / 2)])
    bounds = _bounds(config, ["logchol", "free", "logchol", "logvar"])
    theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])
    nobs = stats.n_obs

    def objective(theta):
        L, s2 = _lmm_unpack(theta)
        wb = gauss._Woodbury(stats, L, s2, False)
        beta = gauss.gls_beta(stats, L, s2, False, wb=wb)
        ll, _, dG, ds2 = gauss.loglik(stats, beta, L, s2, False, grad=True, wb=wb)
        return -ll / nobs, -_lmm_chain(theta, L, s2, dG, ds2) / nobs

    theta, converged, nit, trace = _optimize(objective, theta0, bounds, config)
    Lc, s2 = _lmm_unpack(theta)
    # back to effects at age 0: (u0, u1) = A (u0c, u1)
    A = np.array([[1.0, -c], [0.0, 1.0]])
    Dc = Lc @ Lc.T
    L = _psd_factor(A @ Dc @ A.T)
    beta = gauss.gls_beta(raw, L, s2, False)
    ll = gauss.loglik(raw, beta, L, s2, False)
    if not converged:
        log.warning("LMM for %s did not converge after %d iterations", item, nit)
    return LmmFit(item, beta[0].copy(), L, float(s2[0]), float(ll), converged, nit, trace)


def predict_ranef_lmm(fit: LmmFit, ages, values):
    """BLUP (b0, b1) for one subject; works for subjects not seen at fit time.

    Returns ``(b, prior_mean)``; ``prior_mean`` is True when no value was
    observed and the prior mean (0, 0) is returned.
    """
    ages = np.asarray(ages, float)
    values = np.asarray(values, float).reshape(-1)
    obs = ~np.isnan(values)
    if not obs.any():
        return np.zeros(2), True
    stats = gauss.process_stats(np.zeros(len(ages), int), ages, values[:, None], 1, ("new",))
    b = gauss.blup(stats, fit.beta.reshape(1, 2), fit.chol, np.array([fit.sigma2_eps]), False)
    return b[0], False


# --------------------------------------------------------------------------
# MLPMM
# --------------------------------------------------------------------------


def mlpmm_loglik(beta, Sigma_u, sigma2_b, sigma2_eps, data, items: Sequence[str] | None = None, per_subject=False):
    """Marginal Gaussian log-likelihood of the MLPMM for one process."""
    stats = data if isinstance(data, gauss.ProcessStats) else stats_for(data, items)
    r = stats.r
    s2b = np.asarray(sigma2_b, float).reshape(r)
    if np.any(s2b < 0):
        raise DomainError("sigma2_b must be >= 0")
    k = 2 + r
    L = np.zeros((k, k))
    L[:2, :2] = _psd_factor(Sigma_u)
    L[2:, 2:] = np.diag(np.sqrt(s2b))
    s2 = _check_variance(sigma2_eps, "sigma2_eps").reshape(r)
    return gauss.loglik(stats, np.asarray(beta, float).reshape(r, 2), L, s2, True, per_subject=per_subject)


def fit_mlpmm(data: LongitudinalDataset | gauss.ProcessStats, items: Sequence[str] | None = None,
              config: OptimizerConfig | None = None, process: str | None = None) -> MlpmmFit:
    """Maximum likelihood fit of the MLPMM for the items of one latent process."""
    config = config or OptimizerConfig()
    stats = data if isinstance(data, gauss.ProcessStats) else stats_for(data, items)
    r = stats.r
    items = tuple(items) if items is not None else tuple(f"item{q}" for q in range(r))
    if r < 2:
        raise FitError("the MLPMM needs at least 2 items; fit an LMM for single-item processes")
    _validate_stats(stats, items)
    _, _, mean_a2 = _pooled_ols(stats)
    # The unit intercept variance refers to age 0, so the parameters stay on
    # that scale, but the arithmetic runs on mean-centred ages: with cohort
    # ages (around 60) the raw sums of squares lose most of their digits.
    # Shared effects at the centred origin are B (u0, u1).
    c = float(stats.sa.sum() / stats.cnt.sum())
    cstats = gauss.shift_ages(stats, c)
    B = np.array([[1.0, c], [0.0, 1.0]])
    _, var, _ = _pooled_ols(cstats)
    a2 = float(max(mean_a2.mean(), 1e-12))
    theta0 = np.concatenate([[0.0, 0.5 * np.log(var.mean() / (4 * a2))], np.log(var / 4), np.log(var / 2)])
    bounds = _bounds(config, ["free", "logchol"] + ["logvar"] * (2 * r))
    theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])
    nobs = stats.n_obs

    def centred(L):
        Lc = L.copy()
        Lc[:2, :2] = B @ L[:2, :2]
        return Lc

    def objective(theta):
        L, s2, s2b = _mlpmm_unpack(theta, r)
        Lc = centred(L)
        wb = gauss._Woodbury(cstats, Lc, s2, True)
        beta = gauss.gls_beta(cstats, Lc, s2, True, wb=wb)
        ll, _, dG, ds2 = gauss.loglik(cstats, beta, Lc, s2, True, grad=True, wb=wb)
        dG[:2, :2] = B.T @ dG[:2, :2] @ B
        return -ll / nobs, -_mlpmm_chain(theta, L, s2b, s2, dG, ds2) / nobs

    theta, converged, nit, trace = _optimize(objective, theta0, bounds, config)
    L, s2, s2b = _mlpmm_unpack(theta, r)
    beta_c = gauss.gls_beta(cstats, centred(L), s2, True)
    ll = gauss.loglik(cstats, beta_c, centred(L), s2, True)
    beta = beta_c.copy()
    beta[:, 0] -= c * beta_c[:, 1]
    if not converged:
        log.warning("MLPMM for %s did not converge after %d iterations", process or items, nit)
    return MlpmmFit(process or "process", items, beta, L[:2, :2].copy(), s2b, s2, float(ll), converged, nit, trace)


def predict_ranef_mlpmm(fit: MlpmmFit, ages, values):
    """BLUP (u0, u1, b_1..b_r) for one subject.

    ``values`` is ``(m_i, r)`` with NaN for missing cells. Returns
    ``(eta, prior_mean)``.
    """
    ages = np.asarray(ages, float)
    values = np.asarray(values, float).reshape(len(ages), fit.r)
    if not (~np.isnan(values)).any():
        return np.zeros(2 + fit.r), True
    stats = gauss.process_stats(np.zeros(len(ages), int), ages, values, 1, ("new",))
    eta = gauss.blup(stats, fit.beta, fit.chol, fit.sigma2_eps, True)
    return eta[0], False


def predict_ranef_batch(fit: LmmFit | MlpmmFit, data: LongitudinalDataset):
    """BLUPs for every subject of ``data`` (in ``data.subject_ids`` order).

    Returns ``(matrix (n, k), prior_mean flags (n,))``.
    """
    items = [fit.item] if isinstance(fit, LmmFit) else list(fit.items)
    item_effects = isinstance(fit, MlpmmFit)
    stats = stats_for(data, items, drop_empty=False)
    empty = stats.cnt.sum(axis=1) == 0
    sigma2 = np.atleast_1d(fit.sigma2_eps)
    out = gauss.blup(stats, np.asarray(fit.beta).reshape(-1, 2), fit.chol, sigma2, item_effects)
    out[empty] = 0.0
    return out, empty
