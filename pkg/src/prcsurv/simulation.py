"""Synthetic studies: longitudinal markers generated from linear mixed models
(one item per marker) or from latent process models (several items per
process), with Weibull event times driven by the subjects' random effects.

Twelve predefined scenarios are available through :func:`scenario`; any
other configuration can be described with a :class:`ScenarioSpec`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from scipy.optimize import brentq

from .data import DomainError, ItemMap, LongitudinalDataset, Study, SurvivalDataset, align

__all__ = [
    "Design",
    "VISIT_SCHEDULES",
    "ScenarioSpec",
    "SimulatedStudy",
    "Truth",
    "scenario",
    "generate_study",
    "generate_lmm_study",
    "generate_mlpmm_study",
    "weibull_event_times",
    "calibrate_weibull_scale",
    "calibrate_censoring",
    "apply_design_and_censoring",
]


class Design(str, Enum):
    FEW = "FEW"
    MANY = "MANY"


VISIT_SCHEDULES = {
    Design.FEW: (0.0, 1.0, 2.0),
    Design.MANY: tuple(0.5 * k for k in range(10)),
}

_RHO_SIM9 = 0.5 * math.sqrt(0.2)


@dataclass(frozen=True)
class ScenarioSpec:
    """Full description of a simulation setting.

    ``model`` is ``"LMM"`` (``r == 1``; ``cov`` is the intercept/slope
    covariance D of every marker) or ``"MLPMM"`` (``r >= 2`` items per
    process; ``cov`` is the shared-effect covariance Sigma_u). The first
    ``n_active`` processes enter the hazard; ``effects`` selects whether
    both intercept and slope effects are active or only the slopes.
    ``weibull_scale=None`` calibrates the scale so the marginal median
    event time equals ``median_time``; ``censor_max=None`` calibrates the
    uniform censoring bound to ``censoring_fraction``.
    """

    id: int | str
    model: str
    p: int
    r: int = 1
    n: int = 300
    design: Design = Design.MANY
    cov: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    sigma2_b: float = 1.0
    sigma2_eps: float = 1.0
    n_active: int = 0
    effects: str = "both"
    coef_range: tuple[float, float] = (0.5, 1.0)
    fixed_intercept: float = 0.0
    fixed_slope: float = 0.0
    baseline_age: float = 0.0
    weibull_shape: float = 2.0
    weibull_scale: float | None = None
    median_time: float = 2.5
    censoring_fraction: float = 0.3
    censor_max: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "design", Design(self.design))
        object.__setattr__(self, "cov", tuple(tuple(float(x) for x in row) for row in self.cov))
        object.__setattr__(self, "coef_range", tuple(float(x) for x in self.coef_range))
        if self.model not in ("LMM", "MLPMM"):
            raise DomainError(f"unknown scenario model {self.model!r}")
        if self.p < 1 or self.n < 1:
            raise DomainError("p and n must be positive")
        if self.model == "LMM" and self.r != 1:
            raise DomainError("LMM scenarios have one item per marker")
        if self.model == "MLPMM" and self.r < 2:
            raise DomainError("MLPMM scenarios need at least two items per process")
        C = np.array(self.cov)
        if C.shape != (2, 2) or not np.allclose(C, C.T) or np.linalg.eigvalsh(C).min() < -1e-12:
            raise DomainError("random-effect covariance must be a symmetric PSD 2x2 matrix")
        if not 0 <= self.n_active <= self.p:
            raise DomainError("n_active must lie in [0, p]")
        if self.effects not in ("both", "slope"):
            raise DomainError("effects must be 'both' or 'slope'")
        lo, hi = self.coef_range
        if not 0 <= lo <= hi:
            raise DomainError("coef_range must satisfy 0 <= low <= high")
        if self.sigma2_eps <= 0 or self.sigma2_b < 0:
            raise DomainError("residual variance must be > 0 and item variance >= 0")
        if self.weibull_shape <= 0 or (self.weibull_scale is not None and self.weibull_scale <= 0):
            raise DomainError("Weibull shape and scale must be > 0")
        if self.median_time <= 0:
            raise DomainError("median_time must be > 0")
        if not 0 <= self.censoring_fraction < 1:
            raise DomainError("censoring_fraction must lie in [0, 1)")
        if self.censor_max is not None and self.censor_max <= 0:
            raise DomainError("censor_max must be > 0: every subject would be censored at time 0")

    @property
    def items(self) -> tuple[str, ...]:
        return self.item_map().items

    def item_map(self) -> ItemMap:
        w = len(str(self.p))
        if self.model == "LMM":
            return ItemMap.identity([f"y{s + 1:0{w}d}" for s in range(self.p)])
        return ItemMap.from_mapping(
            [(f"P{s + 1:0{w}d}_{q + 1}", f"P{s + 1:0{w}d}") for s in range(self.p) for q in range(self.r)]
        )

    def replace(self, **changes) -> "ScenarioSpec":
        d = self.to_dict()
        d.update(changes)
        return ScenarioSpec.from_dict(d)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["design"] = self.design.value
        d["cov"] = [list(row) for row in self.cov]
        d["coef_range"] = list(self.coef_range)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown scenario fields {sorted(unknown)}")
        d = dict(d)
        if "cov" in d:
            d["cov"] = tuple(tuple(row) for row in d["cov"])
        if "coef_range" in d:
            d["coef_range"] = tuple(d["coef_range"])
        return cls(**d)


def scenario(id: int, n: int = 300, design: Design | str = Design.MANY) -> ScenarioSpec:
    """One of the twelve predefined settings.

    1-3: 30 markers, 6 active. 4-6: 150 markers, 10 active.
    7-9: 10 processes x 3 items, 4 active. 10-12: 50 processes x 3 items, 10 active.
    Within each triple: (a) intercepts and slopes with equal variance both
    drive the hazard, (b) only slopes drive it, (c) small intercept / large
    slope variance with both driving it.
    """
    if id not in range(1, 13):
        raise DomainError(f"scenario id must be in 1..12, got {id!r}")
    k = (id - 1) % 3
    effects = "slope" if k == 1 else "both"
    if id <= 6:
        p, n_active = (30, 6) if id <= 3 else (150, 10)
        cov = ((0.1, 0.0), (0.0, 2.0)) if k == 2 else ((1.0, 0.0), (0.0, 1.0))
        return ScenarioSpec(id=id, model="LMM", p=p, r=1, n=n, design=design, cov=cov,
                            n_active=n_active, effects=effects)
    p, n_active = (10, 4) if id <= 9 else (50, 10)
    cov = ((0.1, _RHO_SIM9), (_RHO_SIM9, 2.0)) if k == 2 else ((1.0, 0.5), (0.5, 1.0))
    return ScenarioSpec(id=id, model="MLPMM", p=p, r=3, n=n, design=design, cov=cov,
                        n_active=n_active, effects=effects)


@dataclass(frozen=True, eq=False)
class Truth:
    """Generating quantities, kept for oracle checks.

    ``shared`` holds (intercept, slope) random effects per subject and
    process, ``(n, p, 2)``; ``item_effects`` the item-specific intercepts
    ``(n, n_items)`` (zeros for LMM scenarios). ``gamma``/``delta`` are the
    hazard coefficients of the intercept/slope effects.
    """

    shared: np.ndarray
    item_effects: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    lp: np.ndarray
    event_time: np.ndarray
    censor_time: np.ndarray
    weibull_scale: float
    censor_max: float

    def to_dict(self) -> dict[str, Any]:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


@dataclass(frozen=True, eq=False)
class SimulatedStudy:
    spec: ScenarioSpec
    seed: int
    longitudinal: LongitudinalDataset
    survival: SurvivalDataset
    item_map: ItemMap
    truth: Truth
    study: Study = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "study", align(self.longitudinal, self.survival, self.item_map))

    def truth_record(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "seed": self.seed,
            "subject_ids": list(self.survival.subject_ids),
            **self.truth.to_dict(),
            "realized_censoring_fraction": float(1.0 - self.survival.status.mean()),
        }


def weibull_event_times(lp, shape: float, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Inverse-transform draws from the proportional-hazards Weibull law with
    cumulative hazard ``scale * exp(lp) * t**shape``."""
    if shape <= 0 or scale <= 0:
        raise DomainError("Weibull shape and scale must be > 0")
    lp = np.asarray(lp, dtype=np.float64)
    u = rng.random(lp.shape)
    return (-np.log(u) / (scale * np.exp(lp))) ** (1.0 / shape)


def calibrate_weibull_scale(lp, shape: float, median_time: float) -> float:
    """Scale such that the population-averaged survival at ``median_time`` is 1/2."""
    lp = np.asarray(lp, dtype=np.float64)
    base = np.exp(lp) * median_time**shape

    def f(log_scale):
        return float(np.mean(np.exp(-np.exp(log_scale) * base))) - 0.5

    # bracket: mean survival is decreasing in the scale
    lo, hi = -50.0, 50.0
    return float(np.exp(brentq(f, lo, hi, xtol=1e-14, rtol=1e-14)))


def calibrate_censoring(event_time, fraction: float) -> float:
    """Upper bound c of Uniform(0, c) censoring whose expected censored
    fraction, given the event times, equals ``fraction``."""
    t = np.asarray(event_time, dtype=np.float64)
    if fraction <= 0:
        return math.inf

    def f(log_c):
        c = np.exp(log_c)
        return float(np.mean(np.minimum(t, c))) / c - fraction

    lo = math.log(t.min()) - 5.0
    hi = math.log(t.max()) + math.log(1.0 / fraction) + 5.0
    return float(np.exp(brentq(f, lo, hi, xtol=1e-14)))


def apply_design_and_censoring(event_time, design: Design | str, censor_max: float, rng: np.random.Generator):
    """Draw censoring times and truncate the visit schedule.

    Returns ``(time, status, censor_time, visits)`` where ``visits`` is a
    boolean ``(n, n_visits)`` mask of planned visits made on or before the
    observed time.
    """
    design = Design(design)
    t = np.asarray(event_time, dtype=np.float64)
    if not censor_max > 0:
        raise DomainError("censoring bound must be > 0: every subject would be censored at time 0")
    if math.isinf(censor_max):
        c = np.full(t.shape, math.inf)
    else:
        c = censor_max * rng.random(t.shape)
        # a draw of exactly 0 would give a zero follow-up time
        c = np.where(c > 0, c, np.nextafter(0.0, 1.0))
    time = np.minimum(t, c)
    status = (t <= c).astype(np.int64)
    sched = np.asarray(VISIT_SCHEDULES[design])
    visits = sched[None, :] <= time[:, None]
    return time, status, c, visits


def _coefficients(spec: ScenarioSpec, rng):
    lo, hi = spec.coef_range
    a = spec.n_active
    mag = rng.uniform(lo, hi, size=(a, 2))
    sign = rng.choice(np.array([-1.0, 1.0]), size=(a, 2))
    gamma = np.zeros(spec.p)
    delta = np.zeros(spec.p)
    coef = mag * sign
    if spec.effects == "both":
        gamma[:a] = coef[:, 0]
    delta[:a] = coef[:, 1]
    return gamma, delta


def _generate(spec: ScenarioSpec, seed: int) -> SimulatedStudy:
    rng = np.random.default_rng(seed)
    n, p, r = spec.n, spec.p, spec.r
    gamma, delta = _coefficients(spec, rng)
    cov = np.array(spec.cov)
    # eigen-decomposition handles singular (PSD) covariances
    w, V = np.linalg.eigh(cov)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    shared = rng.standard_normal((n, p, 2)) @ root.T
    n_items = p * r
    if spec.model == "MLPMM":
        item_eff = rng.standard_normal((n, n_items)) * math.sqrt(spec.sigma2_b)
    else:
        item_eff = np.zeros((n, n_items))
    lp = shared[:, :, 0] @ gamma + shared[:, :, 1] @ delta
    scale = spec.weibull_scale
    if scale is None:
        scale = calibrate_weibull_scale(lp, spec.weibull_shape, spec.median_time)
    event_time = weibull_event_times(lp, spec.weibull_shape, scale, rng)
    c_max = spec.censor_max
    if c_max is None:
        c_max = calibrate_censoring(event_time, spec.censoring_fraction)
    time, status, censor_time, visits = apply_design_and_censoring(event_time, spec.design, c_max, rng)

    sched = np.asarray(VISIT_SCHEDULES[spec.design])
    subj_idx, visit_idx = np.nonzero(visits)
    a = sched[visit_idx]
    proc = np.repeat(np.arange(p), r)
    u = shared[subj_idx][:, proc, :]  # (rows, n_items, 2)
    mean = spec.fixed_intercept + spec.fixed_slope * a[:, None]
    y = mean + u[..., 0] + item_eff[subj_idx] + u[..., 1] * a[:, None]
    y = y + rng.standard_normal(y.shape) * math.sqrt(spec.sigma2_eps)

    w_id = max(4, len(str(n)))
    ids = np.array([f"s{i + 1:0{w_id}d}" for i in range(n)])
    item_map = spec.item_map()
    longit = LongitudinalDataset(ids[subj_idx], spec.baseline_age + a, y, item_map.items)
    surv = SurvivalDataset(ids, np.full(n, spec.baseline_age), time, status)
    truth = Truth(shared, item_eff, gamma, delta, lp, event_time, censor_time, float(scale), float(c_max))
    return SimulatedStudy(spec, int(seed), longit, surv, item_map, truth)


def generate_lmm_study(spec: ScenarioSpec, seed: int) -> SimulatedStudy:
    """Markers from random intercept/slope linear mixed models."""
    if spec.model != "LMM":
        raise DomainError("generate_lmm_study needs an LMM scenario")
    return _generate(spec, seed)


def generate_mlpmm_study(spec: ScenarioSpec, seed: int) -> SimulatedStudy:
    """Items from latent process models: shared intercept/slope per process
    plus item-specific random intercepts. Only shared effects drive the hazard."""
    if spec.model != "MLPMM":
        raise DomainError("generate_mlpmm_study needs an MLPMM scenario")
    return _generate(spec, seed)


def generate_study(spec: ScenarioSpec, seed: int) -> SimulatedStudy:
    return generate_lmm_study(spec, seed) if spec.model == "LMM" else generate_mlpmm_study(spec, seed)
