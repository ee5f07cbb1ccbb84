"""Independent reference implementations used by the tests.

Everything here is written the slow, obvious way (dense covariance
matrices, explicit loops over risk sets and pairs) so that it shares no
code path with the package.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import multivariate_normal

from prcsurv.data import LongitudinalDataset


# --------------------------------------------------------------------------
# Random small mixed-model instances
# --------------------------------------------------------------------------


def random_psd(rng, k, scale=1.0):
    A = rng.normal(size=(k, k)) * scale
    return A @ A.T + 0.05 * np.eye(k)


def random_longitudinal(rng, n, r, max_visits=3, p_missing=0.2, items=None):
    """Small long-format dataset with random ages and missing cells."""
    items = items or [f"q{j}" for j in range(r)]
    subj, ages, vals = [], [], []
    for i in range(n):
        m = rng.integers(1, max_visits + 1)
        a = np.sort(rng.uniform(0, 5, size=m))
        y = rng.normal(size=(m, r))
        miss = rng.random((m, r)) < p_missing
        for j in range(m):
            if miss[j].all():
                miss[j, rng.integers(r)] = False
        y[miss] = np.nan
        subj += [f"s{i}"] * m
        ages.append(a)
        vals.append(y)
    return LongitudinalDataset(np.array(subj), np.concatenate(ages), np.vstack(vals), tuple(items))


def subject_blocks(data: LongitudinalDataset, items):
    """Per subject: stacked (item index, age, value) of the observed cells."""
    cols = data.item_index(items)
    out = []
    for k in range(data.n_subjects):
        lo, hi = data.offsets[k], data.offsets[k + 1]
        q_idx, a, y = [], [], []
        for row in range(lo, hi):
            for q, c in enumerate(cols):
                v = data.values[row, c]
                if not np.isnan(v):
                    q_idx.append(q)
                    a.append(data.age[row])
                    y.append(v)
        out.append((np.array(q_idx, int), np.array(a), np.array(y)))
    return out


def dense_design(q_idx, a, r, item_effects):
    """Random-effect design Z (rows: observed cells) for the stacked model."""
    k = 2 + r if item_effects else 2
    Z = np.zeros((len(a), k))
    Z[:, 0] = 1.0
    Z[:, 1] = a
    if item_effects:
        Z[np.arange(len(a)), 2 + q_idx] = 1.0
    return Z


def dense_loglik(data, items, beta, G, sigma2, item_effects):
    """Sum over subjects of the multivariate-normal log-density."""
    r = len(items)
    beta = np.asarray(beta, float).reshape(r, 2)
    sigma2 = np.asarray(sigma2, float).reshape(r)
    total = 0.0
    for q_idx, a, y in subject_blocks(data, items):
        if len(y) == 0:
            continue
        Z = dense_design(q_idx, a, r, item_effects)
        mu = beta[q_idx, 0] + beta[q_idx, 1] * a
        V = Z @ G @ Z.T + np.diag(sigma2[q_idx])
        total += multivariate_normal(mu, V, allow_singular=False).logpdf(y)
    return float(total)


def dense_conditional_mean(q_idx, a, y, r, beta, G, sigma2, item_effects):
    """E[eta | y] from the joint normal of (eta, y)."""
    beta = np.asarray(beta, float).reshape(r, 2)
    sigma2 = np.asarray(sigma2, float).reshape(r)
    Z = dense_design(q_idx, a, r, item_effects)
    mu = beta[q_idx, 0] + beta[q_idx, 1] * a
    cov_ey = G @ Z.T
    V = Z @ G @ Z.T + np.diag(sigma2[q_idx])
    return cov_ey @ np.linalg.solve(V, y - mu)


# --------------------------------------------------------------------------
# Cox model
# --------------------------------------------------------------------------


def brute_cox_nll(beta, X, time, status):
    """Breslow negative log partial likelihood by explicit risk-set loops."""
    eta = X @ beta
    nll = 0.0
    for t in np.unique(time[status == 1]):
        D = (time == t) & (status == 1)
        R = time >= t
        nll -= eta[D].sum() - D.sum() * np.log(np.exp(eta[R]).sum())
    return nll


def _brute_derivs(beta, X, time, status):
    d = X.shape[1]
    g = np.zeros(d)
    H = np.zeros((d, d))
    for t in np.unique(time[status == 1]):
        D = (time == t) & (status == 1)
        R = time >= t
        w = np.exp(X[R] @ beta)
        s0 = w.sum()
        s1 = X[R].T @ w
        s2 = (X[R].T * w) @ X[R]
        m = D.sum()
        g -= X[D].sum(axis=0) - m * s1 / s0
        H += m * (s2 / s0 - np.outer(s1, s1) / s0**2)
    return g, H


def newton_cox(X, time, status, iters=100, tol=1e-12, ridge=0.0):
    """Breslow Cox fit by plain Newton-Raphson with step halving.

    Minimizes ``nll(beta) / n + ridge * |beta|^2`` (``ridge=0`` gives the
    unpenalized maximum partial likelihood estimate).
    """
    n, d = X.shape

    def obj(b):
        return brute_cox_nll(b, X, time, status) / n + ridge * b @ b

    beta = np.zeros(d)
    f = obj(beta)
    for _ in range(iters):
        g, H = _brute_derivs(beta, X, time, status)
        g = g / n + 2 * ridge * beta
        H = H / n + 2 * ridge * np.eye(d)
        step = np.linalg.solve(H, g)
        t_ = 1.0
        while True:
            cand = beta - t_ * step
            fc = obj(cand)
            if fc <= f + 1e-15 or t_ < 1e-10:
                break
            t_ /= 2
        beta, f = cand, fc
        if np.max(np.abs(t_ * step)) < tol:
            break
    return beta


# --------------------------------------------------------------------------
# Discrimination
# --------------------------------------------------------------------------


def brute_c_index(lp, time, status, tau=None):
    tau = time.max() if tau is None else tau
    num = den = 0.0
    n = len(time)
    for i in range(n):
        if status[i] != 1 or time[i] > tau:
            continue
        for j in range(n):
            if time[j] > time[i]:
                den += 1
                if lp[i] > lp[j]:
                    num += 1
                elif lp[i] == lp[j]:
                    num += 0.5
    return num / den


def empirical_auc(lp, time, t):
    """Pairwise AUC between subjects failing by t and subjects surviving past t
    (uncensored data)."""
    cases = lp[time <= t]
    controls = lp[time > t]
    diff = cases[:, None] - controls[None, :]
    return float(((diff > 0) + 0.5 * (diff == 0)).mean())
