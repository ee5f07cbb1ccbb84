"""End-to-end penalized regression calibration.

Three steps: (1) fit one mixed model per item (LMM) or per latent process
(MLPMM), (2) summarize every subject by its predicted random effects,
(3) fit a penalized Cox model on those summaries. A baseline comparator
that uses first-visit item values directly is available as
``BASELINE_PCOX``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .cox import PenaltyConfig, PenalizedCoxFit, fit_penalized_cox, nested_cv, predict_survival
from .data import DomainError, ItemMap, LongitudinalDataset, SchemaError, Study, SurvivalDataset
from .metrics import Metric, MetricRequest, TDAUC_GRID, evaluate
from .mixed.models import FitError, LmmFit, MlpmmFit, OptimizerConfig, fit_lmm, fit_mlpmm, stats_for
from .mixed.summary import Variant, build_ranef_summary, expected_columns

log = logging.getLogger(__name__)

__all__ = [
    "ModelVariant",
    "PipelineConfig",
    "ConvergenceError",
    "PrcModel",
    "fit_mixed_models",
    "fit_prc",
    "parallel_map",
    "default_metrics",
]

AGE_COLUMN = "baseline_age"


class ModelVariant(str, Enum):
    BASELINE_PCOX = "BASELINE_PCOX"
    PRC_LMM = "PRC_LMM"
    PRC_MLPMM_U = "PRC_MLPMM_U"
    PRC_MLPMM_UB = "PRC_MLPMM_UB"

    @property
    def summary_variant(self) -> Variant | None:
        return {
            ModelVariant.PRC_LMM: Variant.LMM,
            ModelVariant.PRC_MLPMM_U: Variant.MLPMM_U,
            ModelVariant.PRC_MLPMM_UB: Variant.MLPMM_UB,
        }.get(self)


class ConvergenceError(RuntimeError):
    """A fitted model did not reach its convergence criterion."""


def default_metrics() -> tuple[MetricRequest, ...]:
    return (MetricRequest(Metric.C_INDEX),) + tuple(MetricRequest(Metric.TDAUC, horizon=t) for t in TDAUC_GRID)


@dataclass(frozen=True)
class PipelineConfig:
    """Settings of one PRC model.

    ``alpha_grid`` switches the elastic-net mixing parameter from the fixed
    ``penalty.alpha`` to selection by nested cross-validation over the grid.
    ``span`` is the neighbourhood width of the tdAUC estimator (None: the
    estimator's default). ``require_convergence`` turns non-converged mixed
    model or Cox fits into :class:`ConvergenceError`.
    """

    variant: ModelVariant = ModelVariant.PRC_LMM
    penalty: PenaltyConfig = PenaltyConfig()
    alpha_grid: tuple[float, ...] | None = None
    optimizer: OptimizerConfig = OptimizerConfig()
    metrics: tuple[MetricRequest, ...] = field(default_factory=default_metrics)
    span: float | None = None
    require_convergence: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", ModelVariant(self.variant))
        if self.alpha_grid is not None:
            grid = tuple(float(a) for a in self.alpha_grid)
            if not grid or any(not 0 <= a <= 1 for a in grid):
                raise DomainError("alpha grid must be a non-empty subset of [0, 1]")
            object.__setattr__(self, "alpha_grid", grid)
        if self.penalty.penalty_factors is not None:
            raise DomainError("penalty factors are set by the pipeline (age unpenalized, all else 1)")

    def to_dict(self) -> dict[str, Any]:
        p = self.penalty
        return {
            "variant": self.variant.value,
            "penalty": {"alpha": p.alpha, "lambda": p.lambda_, "n_lambda": p.n_lambda,
                        "lambda_min_ratio": p.lambda_min_ratio, "folds": p.folds},
            "alpha_grid": list(self.alpha_grid) if self.alpha_grid is not None else None,
            "optimizer": dict(self.optimizer.__dict__),
            "metrics": [{"metric": m.metric.value, "horizon": m.horizon, "tau": m.tau} for m in self.metrics],
            "span": self.span,
            "require_convergence": self.require_convergence,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PipelineConfig":
        known = {"variant", "penalty", "alpha_grid", "optimizer", "metrics", "span", "require_convergence"}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown pipeline settings {sorted(unknown)}")
        pen = dict(d.get("penalty", {}))
        pk = {"alpha", "lambda", "n_lambda", "lambda_min_ratio", "folds"}
        if set(pen) - pk:
            raise SchemaError(f"unknown penalty settings {sorted(set(pen) - pk)}")
        if "lambda" in pen:
            pen["lambda_"] = pen.pop("lambda")
        opt = d.get("optimizer", {})
        try:
            penalty = PenaltyConfig(**pen)
            optimizer = OptimizerConfig(**opt)
            metrics = tuple(MetricRequest(**m) for m in d["metrics"]) if "metrics" in d else default_metrics()
            variant = ModelVariant(d.get("variant", "PRC_LMM"))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, DomainError):
                raise
            raise SchemaError(str(exc)) from None
        return cls(variant, penalty, d.get("alpha_grid"), optimizer, metrics, d.get("span"),
                   bool(d.get("require_convergence", True)))


# --------------------------------------------------------------------------
# Parallel helper
# --------------------------------------------------------------------------


def parallel_map(fn: Callable, tasks: Sequence, workers: int = 1) -> list:
    """Ordered map, in a process pool when ``workers > 1``.

    Results are returned in task order, so the outcome never depends on the
    worker count.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


# --------------------------------------------------------------------------
# Step 1
# --------------------------------------------------------------------------


def _fit_task(task):
    kind, key, items, stats, config = task
    if kind == "LMM":
        return fit_lmm(stats, items[0], config)
    return fit_mlpmm(stats, items, config, process=key)


def fit_mixed_models(data: LongitudinalDataset, item_map: ItemMap, variant: Variant | str,
                     config: OptimizerConfig | None = None, workers: int = 1) -> dict[str, LmmFit | MlpmmFit]:
    """Fit every mixed model a summary variant needs.

    LMM variant: one LMM per item. MLPMM variants: one MLPMM per process,
    single-item processes get an LMM whose (intercept, slope) effects play
    the role of the shared effects.
    """
    variant = Variant(variant)
    config = config or OptimizerConfig()
    tasks = []
    if variant is Variant.LMM:
        for it in item_map.items:
            tasks.append(("LMM", it, (it,), stats_for(data, [it]), config))
    else:
        for proc in item_map.processes:
            items = item_map.items_of(proc)
            kind = "LMM" if len(items) == 1 else "MLPMM"
            tasks.append((kind, proc, items, stats_for(data, items), config))
    fits = parallel_map(_fit_task, tasks, workers)
    return {task[1]: fit for task, fit in zip(tasks, fits)}


# --------------------------------------------------------------------------
# Fitted model
# --------------------------------------------------------------------------


def _fit_from_dict(d):
    return LmmFit.from_dict(d) if d["kind"] == "lmm" else MlpmmFit.from_dict(d)


@dataclass(frozen=True, eq=False)
class PrcModel:
    """A fitted PRC (or baseline) model, able to score new subjects."""

    config: PipelineConfig
    item_map: ItemMap
    mixed_fits: dict[str, LmmFit | MlpmmFit]
    fill_values: np.ndarray | None  # baseline comparator: training column means
    include_age: bool
    cox: PenalizedCoxFit
    alpha_selection: dict | None = None

    @property
    def variant(self) -> ModelVariant:
        return self.config.variant

    @property
    def columns(self) -> tuple[str, ...]:
        return self.cox.columns

    def design(self, longitudinal: LongitudinalDataset | None, subject_ids: Sequence[str],
               baseline_age: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Covariate matrix for ``subject_ids`` (rows in that order) plus
        per-subject flags: ``prior_mean`` (some model had no observation)
        and ``single_visit`` (some model saw a single age)."""
        return _design(self.variant, self.item_map, self.mixed_fits, self.fill_values, self.include_age,
                       longitudinal, subject_ids, baseline_age)[:2]

    def linear_predictor(self, longitudinal, subject_ids, baseline_age) -> np.ndarray:
        X, _ = self.design(longitudinal, subject_ids, baseline_age)
        return self.cox.linear_predictor(X)

    def predict_survival(self, longitudinal, subject_ids, baseline_age, times):
        X, flags = self.design(longitudinal, subject_ids, baseline_age)
        return predict_survival(self.cox, X, times), flags

    def score_study(self, study: Study) -> np.ndarray:
        return self.linear_predictor(study.longitudinal, study.subject_ids, study.survival.baseline_age)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "item_map": [list(e) for e in self.item_map.entries],
            "mixed_fits": {k: f.to_dict() for k, f in self.mixed_fits.items()},
            "fill_values": None if self.fill_values is None else self.fill_values.tolist(),
            "include_age": self.include_age,
            "cox": self.cox.to_dict(),
            "alpha_selection": self.alpha_selection,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PrcModel":
        try:
            return cls(
                PipelineConfig.from_dict(d["config"]),
                ItemMap.from_mapping([tuple(e) for e in d["item_map"]]),
                {k: _fit_from_dict(f) for k, f in d["mixed_fits"].items()},
                None if d["fill_values"] is None else np.asarray(d["fill_values"], float),
                bool(d["include_age"]),
                PenalizedCoxFit.from_dict(d["cox"]),
                d.get("alpha_selection"),
            )
        except KeyError as exc:
            raise SchemaError(f"model bundle lacks field {exc.args[0]!r}") from None


def _design(variant, item_map, fits, fill_values, include_age, longitudinal, subject_ids, baseline_age):
    subject_ids = tuple(subject_ids)
    n = len(subject_ids)
    baseline_age = np.asarray(baseline_age, dtype=np.float64).reshape(n)
    prior = np.zeros(n, dtype=bool)
    single = np.zeros(n, dtype=bool)
    if longitudinal is not None and longitudinal.items != item_map.items:
        raise SchemaError("longitudinal item columns do not match the model's item map")
    if longitudinal is not None:
        extra = set(longitudinal.subject_ids) - set(subject_ids)
        if extra:
            raise SchemaError(f"longitudinal data has subjects without baseline rows: {sorted(extra)[:5]}")
        pos = {s: k for k, s in enumerate(longitudinal.subject_ids)}
        rows = np.array([pos.get(s, -1) for s in subject_ids])
    else:
        rows = np.full(n, -1)
    seen = rows >= 0
    if variant is ModelVariant.BASELINE_PCOX:
        cols = list(item_map.items)
        X = np.tile(fill_values, (n, 1))
        if seen.any():
            base = longitudinal.baseline_values()[rows[seen]]
            X[seen] = np.where(np.isnan(base), fill_values, base)
        prior = ~seen
    else:
        sv = variant.summary_variant
        cols = list(expected_columns(item_map, sv))
        X = np.zeros((n, len(cols)))
        if seen.any():
            summ = build_ranef_summary(fits, longitudinal, item_map, sv)
            X[seen] = summ.matrix[rows[seen]]
            prior[seen] = summ.prior_mean.any(axis=1)[rows[seen]]
            single[seen] = summ.single_visit.any(axis=1)[rows[seen]]
        prior[~seen] = True
    if include_age:
        X = np.column_stack([X, baseline_age])
        cols.append(AGE_COLUMN)
    return X, {"prior_mean": prior, "single_visit": single}, tuple(cols)


def fit_prc(study: Study, config: PipelineConfig = PipelineConfig(), seed: int = 0, workers: int = 1) -> PrcModel:
    """Fit the three PRC steps (or the baseline comparator) on one study."""
    variant = config.variant
    longit, surv, item_map = study.longitudinal, study.survival, study.item_map
    include_age = bool(np.ptp(surv.baseline_age) > 0)
    fits: dict = {}
    fill = None
    if variant is ModelVariant.BASELINE_PCOX:
        base = longit.baseline_values()
        with np.errstate(invalid="ignore"):
            fill = np.nanmean(base, axis=0)
        fill = np.where(np.isnan(fill), 0.0, fill)
    else:
        fits = fit_mixed_models(longit, item_map, variant.summary_variant, config.optimizer, workers)
        bad = [k for k, f in fits.items() if not f.converged]
        if bad and config.require_convergence:
            raise ConvergenceError(f"mixed models did not converge for {bad}")
    X, _, cols = _design(variant, item_map, fits, fill, include_age, longit, study.subject_ids, surv.baseline_age)
    factors = tuple([1.0] * (len(cols) - 1) + [0.0]) if include_age else None
    penalty = replace(config.penalty, penalty_factors=factors)
    alpha_sel = None
    if config.alpha_grid is not None:
        ncv = nested_cv(X, surv, config.alpha_grid, penalty.folds, seed, penalty)
        penalty = replace(penalty, alpha=ncv.alpha_star)
        alpha_sel = {"alpha_grid": list(config.alpha_grid), "alpha_star": ncv.alpha_star,
                     "outer_deviance": {str(a): v for a, v in ncv.outer_deviance.items()}}
    cox = fit_penalized_cox(X, surv, penalty, cols, seed)
    if not cox.converged and config.require_convergence:
        raise ConvergenceError("penalized Cox fit did not converge")
    return PrcModel(config, item_map, fits, fill, include_age, cox, alpha_sel)


def naive_metrics(model: PrcModel, study: Study) -> list[dict]:
    """Apparent performance of ``model`` on its own training study."""
    return evaluate(model.cox.train_lp, study.survival, model.config.metrics, model.config.span)


__all__.append("naive_metrics")
