"""Marginal Gaussian likelihood for linear mixed models with random
intercept/slope (optionally plus item-specific random intercepts).

Every subject's response stack is

    y_i = X_i beta + W_i eta_i + e_i,   eta_i ~ N(0, G),   e_i ~ N(0, R_i),

with R_i diagonal (one residual variance per item). All quantities the
likelihood, its gradient and the BLUP need reduce to six per-(subject, item)
sums over the observed cells::

    cnt, sum a, sum a^2, sum y, sum a*y, sum y^2

so evaluation costs O(n * k^3) regardless of visit counts. V_i is never
formed: with G = L L^T and C_i = I + L^T A_i L (A_i = W_i^T R_i^-1 W_i),

    V_i^-1 = R_i^-1 - R_i^-1 W_i L C_i^-1 L^T W_i^T R_i^-1
    log|V_i| = log|R_i| + log|C_i|.

The random-effect design row of a cell of item q at age a is
``(1, a)`` for the shared effects, followed by the indicator ``e_q`` when
item-specific intercepts are present.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class ProcessStats:
    """Sufficient statistics of one process (r items) for n subjects."""

    cnt: np.ndarray  # (n, r)
    sa: np.ndarray
    saa: np.ndarray
    sy: np.ndarray
    say: np.ndarray
    syy: np.ndarray
    subject_ids: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.cnt.shape[0]

    @property
    def r(self) -> int:
        return self.cnt.shape[1]

    @property
    def n_obs(self) -> float:
        return float(self.cnt.sum())

    @property
    def M(self) -> np.ndarray:
        """Per-(subject, item) cross products of (1, a): shape (n, r, 2, 2)."""
        out = np.empty(self.cnt.shape + (2, 2))
        out[..., 0, 0] = self.cnt
        out[..., 0, 1] = out[..., 1, 0] = self.sa
        out[..., 1, 1] = self.saa
        return out

    @property
    def m(self) -> np.ndarray:
        """Per-(subject, item) cross products of (1, a) with y: shape (n, r, 2)."""
        return np.stack([self.sy, self.say], axis=-1)


def process_stats(subject_idx, age, values, n_subjects, subject_ids, drop_empty=True) -> ProcessStats:
    """Accumulate sufficient statistics.

    ``values`` is ``(n_rows, r)`` with NaN for missing cells; ``subject_idx``
    gives the subject code of every row. Subjects without any observed cell
    are dropped when ``drop_empty``.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    obs = ~np.isnan(values)
    y = np.where(obs, values, 0.0)
    a = np.asarray(age, dtype=np.float64)[:, None] * obs
    one = obs.astype(np.float64)

    def acc(w):
        return np.stack(
            [np.bincount(subject_idx, weights=w[:, q], minlength=n_subjects) for q in range(w.shape[1])],
            axis=1,
        )

    cnt = acc(one)
    sa, saa = acc(a), acc(a * a)
    sy, say, syy = acc(y), acc(a * y), acc(y * y)
    ids = tuple(subject_ids)
    if drop_empty:
        keep = cnt.sum(axis=1) > 0
        cnt, sa, saa, sy, say, syy = (x[keep] for x in (cnt, sa, saa, sy, say, syy))
        ids = tuple(s for s, k in zip(ids, keep) if k)
    return ProcessStats(cnt, sa, saa, sy, say, syy, ids)


def shift_ages(stats: ProcessStats, c: float) -> ProcessStats:
    """Statistics of the same data with every age replaced by ``a - c``."""
    sa = stats.sa - c * stats.cnt
    saa = stats.saa - 2.0 * c * stats.sa + c * c * stats.cnt
    say = stats.say - c * stats.sy
    return ProcessStats(stats.cnt, sa, saa, stats.sy, say, stats.syy, stats.subject_ids)


def n_random(r: int, item_effects: bool) -> int:
    return 2 + r if item_effects else 2


def _proj_vec(x, r, item_effects):
    """E_q^T x for every item: (n, k) -> (n, r, 2)."""
    out = np.empty((x.shape[0], r, 2))
    out[:, :, 0] = x[:, :1]
    out[:, :, 1] = x[:, 1:2]
    if item_effects:
        out[:, :, 0] += x[:, 2:]
    return out


def _proj_mat(K, r, item_effects):
    """E_q^T K E_q for every item: (n, k, k) -> (n, r, 2, 2)."""
    P = np.empty((K.shape[0], r, 2, 2))
    P[:, :, :, :] = K[:, None, :2, :2]
    if item_effects:
        idx = np.arange(r) + 2
        col0 = K[:, :2, idx].transpose(0, 2, 1)  # (n, r, 2): K[a, 2+q]
        row0 = K[:, idx, :2]  # (n, r, 2): K[2+q, b]
        P[:, :, :, 0] += col0
        P[:, :, 0, :] += row0
        P[:, :, 0, 0] += K[:, idx, idx]
    return P


def _embed_mat(Mq, r, item_effects, k):
    """sum_q E_q Mq E_q^T with per-item weights already applied: (n, r, 2, 2) -> (n, k, k)."""
    n = Mq.shape[0]
    A = np.zeros((n, k, k))
    A[:, :2, :2] = Mq.sum(axis=1)
    if item_effects:
        idx = np.arange(r) + 2
        A[:, :2, idx] = Mq[:, :, :, 0].transpose(0, 2, 1)
        A[:, idx, :2] = Mq[:, :, 0, :]
        A[:, idx, idx] = Mq[:, :, 0, 0]
    return A


def _embed_vec(v, item_effects, k):
    """sum_q E_q v_q: (n, r, 2) -> (n, k)."""
    out = np.zeros((v.shape[0], k))
    out[:, :2] = v.sum(axis=1)
    if item_effects:
        out[:, 2:] = v[:, :, 0]
    return out


class _Woodbury:
    """Per-subject factorizations at given (L, sigma2)."""

    def __init__(self, stats: ProcessStats, L, sigma2, item_effects):
        r = stats.r
        k = n_random(r, item_effects)
        self.r, self.k, self.item_effects = r, k, item_effects
        self.M = stats.M
        self.w = 1.0 / sigma2  # (r,)
        Mw = self.M * self.w[None, :, None, None]
        self.A = _embed_mat(Mw, r, item_effects, k)
        LtAL = L.T @ self.A @ L
        C = LtAL + np.eye(k)
        chol = np.linalg.cholesky(C)
        self.logdetC = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        Cinv = np.linalg.inv(C)
        Cinv = 0.5 * (Cinv + Cinv.transpose(0, 2, 1))
        self.K = L @ Cinv @ L.T


def _residual_terms(stats: ProcessStats, beta):
    """rho_q = m_q - M_q beta_q and sum of squared residuals per (subject, item)."""
    M, m = stats.M, stats.m
    Mb = np.einsum("nqab,qb->nqa", M, beta)
    rho = m - Mb
    ss = stats.syy - 2.0 * (m * beta[None]).sum(-1) + (Mb * beta[None]).sum(-1)
    return rho, ss


def loglik(stats: ProcessStats, beta, L, sigma2, item_effects, grad=False, per_subject=False, wb=None):
    """Marginal log-likelihood and, optionally, its gradient.

    Returns ``ll`` or ``(ll, dbeta (r,2), dG (k,k), dsigma2 (r,))`` where
    ``dG`` is the derivative with respect to the entries of G taken as
    independent (a symmetric matrix). ``wb`` may pass a factorization
    already computed at the same (L, sigma2).
    """
    beta = np.asarray(beta, dtype=np.float64).reshape(stats.r, 2)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if wb is None:
        wb = _Woodbury(stats, L, sigma2, item_effects)
    r, k = wb.r, wb.k
    rho, ss = _residual_terms(stats, beta)
    c = _embed_vec(rho * wb.w[None, :, None], item_effects, k)
    v = (wb.K @ c[:, :, None])[:, :, 0]
    quad = (ss * wb.w).sum(axis=1) - (c * v).sum(axis=1)
    logdetR = (stats.cnt * np.log(sigma2)).sum(axis=1)
    ll_i = -0.5 * (stats.cnt.sum(axis=1) * LOG2PI + logdetR + wb.logdetC + quad)
    ll = ll_i if per_subject else float(ll_i.sum())
    if not grad:
        return ll
    A, K = wb.A, wb.K
    s = c - (A @ v[:, :, None])[:, :, 0]
    AKA = (A @ K @ A).sum(axis=0)
    dG = 0.5 * (s.T @ s - A.sum(axis=0) + AKA)
    dG = 0.5 * (dG + dG.T)
    vq = _proj_vec(v, r, item_effects)  # (n, r, 2)
    P = _proj_mat(K, r, item_effects)  # (n, r, 2, 2)
    M = wb.M
    trKA = (P * M).sum(axis=(-1, -2))
    vAv = np.einsum("nqa,nqab,nqb->nq", vq, M, vq)
    vrho = (vq * rho).sum(-1)
    s2 = sigma2[None, :]
    dsig = -0.5 * (stats.cnt / s2 - trKA / s2**2 - (ss - 2.0 * vrho + vAv) / s2**2)
    dsigma2 = dsig.sum(axis=0)
    dbeta = ((rho - np.einsum("nqab,nqb->nqa", M, vq)) * wb.w[None, :, None]).sum(axis=0)
    return ll, dbeta, dG, dsigma2


def gls_beta(stats: ProcessStats, L, sigma2, item_effects, wb=None):
    """Generalized least squares fixed effects at given variance components."""
    if wb is None:
        wb = _Woodbury(stats, L, sigma2, item_effects)
    r, k = wb.r, wb.k
    M, m, w = wb.M, stats.m, wb.w
    # B = W^T R^-1 X : (n, k, 2r); column block q is E_q M_q / sigma2_q
    B = np.zeros((stats.n, k, 2 * r))
    for q in range(r):
        Bq = M[:, q] * w[q]  # (n, 2, 2)
        B[:, :2, 2 * q : 2 * q + 2] = Bq
        if item_effects:
            B[:, 2 + q, 2 * q : 2 * q + 2] = Bq[:, 0, :]
    XRX = np.zeros((2 * r, 2 * r))
    XRy = np.zeros(2 * r)
    for q in range(r):
        XRX[2 * q : 2 * q + 2, 2 * q : 2 * q + 2] = M[:, q].sum(axis=0) * w[q]
        XRy[2 * q : 2 * q + 2] = m[:, q].sum(axis=0) * w[q]
    WRy = _embed_vec(m * w[None, :, None], item_effects, k)
    KB = np.einsum("nij,njl->nil", wb.K, B)
    XVX = XRX - np.einsum("nij,nil->jl", B, KB)
    XVy = XRy - np.einsum("nil,ni->l", KB, WRy)
    XVX = 0.5 * (XVX + XVX.T)
    beta = np.linalg.solve(XVX, XVy)
    return beta.reshape(r, 2)


def blup(stats: ProcessStats, beta, L, sigma2, item_effects):
    """Conditional mean E[eta_i | y_i] for every subject: (n, k)."""
    beta = np.asarray(beta, dtype=np.float64).reshape(stats.r, 2)
    wb = _Woodbury(stats, L, np.asarray(sigma2, dtype=np.float64), item_effects)
    rho, _ = _residual_terms(stats, beta)
    c = _embed_vec(rho * wb.w[None, :, None], item_effects, wb.k)
    v = (wb.K @ c[:, :, None])[:, :, 0]
    s = c - (wb.A @ v[:, :, None])[:, :, 0]
    G = L @ L.T
    return s @ G.T
