"""Discrimination measures for censored survival data and the Kaplan-Meier
estimator."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import SurvivalDataset

__all__ = [
    "MetricError",
    "Metric",
    "MetricRequest",
    "c_index",
    "td_auc",
    "default_span",
    "kaplan_meier",
    "KaplanMeier",
    "evaluate",
    "TDAUC_GRID",
]

# half-yearly horizons up to five years
TDAUC_GRID = tuple(0.5 * k for k in range(1, 11))


class MetricError(ValueError):
    """The requested metric is undefined on the supplied data."""


class Metric(str, Enum):
    C_INDEX = "C_INDEX"
    TDAUC = "TDAUC"


@dataclass(frozen=True)
class MetricRequest:
    metric: Metric
    horizon: float | None = None  # tdAUC horizon (years)
    tau: float | None = None  # C index truncation; None = max observed time

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        for name in ("horizon", "tau"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, float(v))
        if self.metric is Metric.TDAUC and not (self.horizon is not None and self.horizon > 0):
            raise ValueError("tdAUC needs a horizon > 0")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be > 0")

    @property
    def label(self) -> str:
        return "C" if self.metric is Metric.C_INDEX else f"tdAUC({self.horizon:.15g})"


def _ts(surv):
    if isinstance(surv, SurvivalDataset):
        return np.asarray(surv.time, float), np.asarray(surv.status, float)
    t, s = surv
    return np.asarray(t, float), np.asarray(s, float)


def c_index(lp, surv, tau: float | None = None) -> float:
    """Truncated concordance index.

    A pair (i, j) is usable when ``t_i < t_j``, subject i had the event and
    ``t_i <= tau``; it is concordant when ``lp_i > lp_j`` and counts 1/2 when
    the scores tie.
    """
    time, status = _ts(surv)
    lp = np.asarray(lp, dtype=np.float64)
    if lp.shape != time.shape or not np.all(np.isfinite(lp)):
        raise ValueError("scores must be finite, one per subject")
    if tau is None:
        tau = float(time.max())
    order = np.argsort(time, kind="stable")
    t, d, s = time[order], status[order], lp[order]
    idx = np.flatnonzero((d > 0) & (t <= tau))
    num = 0.0
    den = 0.0
    # block over anchor subjects to keep memory at O(block * n)
    for lo in range(0, len(idx), 512):
        ii = idx[lo : lo + 512]
        later = t[None, :] > t[ii, None]
        diff = s[ii, None] - s[None, :]
        num += float(((diff > 0) & later).sum()) + 0.5 * float(((diff == 0) & later).sum())
        den += float(later.sum())
    if den == 0:
        raise MetricError("C index undefined: no usable pairs")
    return num / den


def default_span(n: int) -> float:
    return 0.25 * n ** (-0.2)


def _nn_conditional_survival(marker, time, status, t, span):
    """Nearest-neighbour Kaplan-Meier estimate of P(T > t | marker) per subject.

    Neighbourhoods are defined on the empirical CDF of the marker: subject j
    is a neighbour of value x when |F(x_j) - F(x)| <= span.
    """
    n = len(marker)
    ux, inv = np.unique(marker, return_inverse=True)
    # empirical CDF at each unique value
    F_u = np.searchsorted(np.sort(marker), ux, side="right") / n
    F_j = F_u[inv]
    ev_times = np.unique(time[(status > 0) & (time <= t)])
    at_risk = time[None, :] >= ev_times[:, None]  # (E, n)
    died = (time[None, :] == ev_times[:, None]) & (status[None, :] > 0)
    S_u = np.empty(len(ux))
    for k in range(len(ux)):
        w = (np.abs(F_j - F_u[k]) <= span + 1e-12).astype(np.float64)
        nr = at_risk @ w
        nd = died @ w
        with np.errstate(invalid="ignore", divide="ignore"):
            factor = np.where(nr > 0, 1.0 - nd / nr, 1.0)
        S_u[k] = float(np.prod(factor))
    return S_u[inv]


def td_auc(lp, surv, t: float, span: float | None = None) -> float:
    """Cumulative/dynamic time-dependent AUC at horizon ``t`` with the
    nearest-neighbour smoothed estimate of the bivariate distribution of
    (marker, survival time).

    ``span=0`` makes every neighbourhood contain only tied marker values,
    which on uncensored data gives the empirical AUC.
    """
    time, status = _ts(surv)
    lp = np.asarray(lp, dtype=np.float64)
    if lp.shape != time.shape or not np.all(np.isfinite(lp)):
        raise ValueError("scores must be finite, one per subject")
    n = len(time)
    if not np.any((status > 0) & (time <= t)):
        raise MetricError(f"tdAUC({t:g}) undefined: no events by the horizon")
    if not np.any(time > t):
        raise MetricError(f"tdAUC({t:g}) undefined: nobody at risk after the horizon")
    if span is None:
        span = default_span(n)
    S_x = _nn_conditional_survival(lp, time, status, t, span)
    S_marg = S_x.mean()
    if S_marg <= 0 or S_marg >= 1:
        raise MetricError(f"tdAUC({t:g}) undefined: estimated survival is {S_marg}")
    # sweep cutpoints from high to low marker values
    ux, inv = np.unique(lp, return_inverse=True)
    dead_u = np.bincount(inv, weights=1.0 - S_x, minlength=len(ux))[::-1]
    alive_u = np.bincount(inv, weights=S_x, minlength=len(ux))[::-1]
    tp = np.concatenate([[0.0], np.cumsum(dead_u) / n / (1 - S_marg)])
    fp = np.concatenate([[0.0], np.cumsum(alive_u) / n / S_marg])
    return float(np.trapezoid(tp, fp))


@dataclass(frozen=True, eq=False)
class KaplanMeier:
    """Product-limit estimate tabulated at the distinct observed times."""

    times: np.ndarray
    n_risk: np.ndarray
    n_events: np.ndarray
    n_censored: np.ndarray
    survival: np.ndarray

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        S = np.concatenate([[1.0], self.survival])
        return S[np.searchsorted(self.times, t, side="right")]

    def table(self) -> list[dict]:
        return [
            {"time": float(t), "n_risk": int(r), "n_events": int(e), "n_censored": int(c), "survival": float(s)}
            for t, r, e, c, s in zip(self.times, self.n_risk, self.n_events, self.n_censored, self.survival)
        ]


def kaplan_meier(surv) -> KaplanMeier:
    time, status = _ts(surv)
    ut = np.unique(time)
    n_risk = np.array([(time >= u).sum() for u in ut], dtype=np.int64)
    n_ev = np.array([((time == u) & (status > 0)).sum() for u in ut], dtype=np.int64)
    n_cens = np.array([((time == u) & (status == 0)).sum() for u in ut], dtype=np.int64)
    S = np.cumprod(1.0 - n_ev / n_risk)
    return KaplanMeier(ut, n_risk, n_ev, n_cens, S)


def evaluate(lp, surv, requests, span: float | None = None) -> list[dict]:
    """Evaluate several metric requests; undefined metrics are reported with a flag."""
    rows = []
    for req in requests:
        try:
            if req.metric is Metric.C_INDEX:
                value = c_index(lp, surv, req.tau)
            else:
                value = td_auc(lp, surv, req.horizon, span)
            flag = ""
        except MetricError as exc:
            value, flag = float("nan"), str(exc)
        rows.append({"metric": req.metric.value, "horizon": req.horizon if req.horizon is not None else req.tau,
                     "value": value, "flags": flag})
    return rows
