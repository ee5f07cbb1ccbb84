"""Internal validation by cluster bootstrap optimism correction.

Subjects (with all their repeated measurements) are resampled with
replacement; the complete modelling procedure, tuning included, is rerun on
each replicate. The optimism of replicate b is the difference between its
apparent performance and its performance on the original data; the
corrected estimate subtracts the mean optimism from the apparent
performance of the model fitted to the original data.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import traceback
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .cox import CoxFitError
from .data import DataError, LongitudinalDataset, Study, SurvivalDataset
from .metrics import MetricError, evaluate
from .mixed.models import FitError
from .pipeline import ConvergenceError, PipelineConfig, PrcModel, fit_prc, parallel_map

log = logging.getLogger(__name__)

__all__ = [
    "BootstrapPlan",
    "ValidationError",
    "ValidationReport",
    "cluster_bootstrap_sample",
    "resample_study",
    "run_cbocp",
    "replicate_seed",
]

FAILURE_CEILING = 0.2

# errors that make a single replicate unusable without invalidating the run
REPLICATE_ERRORS = (FitError, CoxFitError, ConvergenceError, MetricError, DataError, np.linalg.LinAlgError,
                    FloatingPointError)


class ValidationError(RuntimeError):
    """Too many bootstrap replicates failed."""


@dataclass(frozen=True)
class BootstrapPlan:
    B: int = 100
    seed: int = 0
    pipeline: PipelineConfig = PipelineConfig()

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")


def cluster_bootstrap_sample(ids: Sequence[str], rng: np.random.Generator) -> list[str]:
    """Draw ``len(ids)`` subject ids with replacement."""
    ids = list(ids)
    if not ids:
        raise ValueError("cannot resample an empty subject list")
    idx = rng.integers(0, len(ids), size=len(ids))
    return [ids[k] for k in idx]


def resample_study(study: Study, drawn: Sequence[str]) -> Study:
    """Dataset of the drawn subjects; the k-th draw of subject s is renamed
    ``s#k`` so repeated draws are distinct clusters."""
    longit, surv = study.longitudinal, study.survival
    pos = {s: k for k, s in enumerate(study.subject_ids)}
    lpos = {s: k for k, s in enumerate(longit.subject_ids)}
    width = len(str(len(drawn)))
    new_ids = [f"{s}#{k:0{width}d}" for k, s in enumerate(drawn)]
    src = np.array([pos[s] for s in drawn])
    rows, subj = [], []
    for new, s in zip(new_ids, drawn):
        k = lpos[s]
        lo, hi = int(longit.offsets[k]), int(longit.offsets[k + 1])
        rows.append(np.arange(lo, hi))
        subj.append(np.full(hi - lo, new, dtype=object))
    rows = np.concatenate(rows)
    subj = np.concatenate(subj)
    new_longit = LongitudinalDataset(subj, longit.age[rows], longit.values[rows], longit.items)
    new_surv = SurvivalDataset(np.array(new_ids, dtype=object), surv.baseline_age[src], surv.time[src],
                               surv.status[src])
    return Study(new_longit, new_surv, study.item_map)


def replicate_seed(seed: int, b: int, B: int) -> np.random.SeedSequence:
    """Independent stream of replicate ``b``."""
    return np.random.SeedSequence(seed).spawn(B)[b]


@dataclass(frozen=True)
class ValidationReport:
    """Naive, per-replicate and corrected performance.

    ``replicates`` holds one record per successful replicate with its
    stream index and, per metric label, the pair (C_b, C_0b).
    """

    labels: tuple[str, ...]
    naive: dict[str, float]
    replicates: list[dict[str, Any]]
    failures: list[dict[str, Any]]
    B: int
    seed: int
    optimism: dict[str, float] = field(init=False)
    corrected: dict[str, float] = field(init=False)

    def __post_init__(self):
        reps = sorted(self.replicates, key=lambda r: r["replicate"])
        object.__setattr__(self, "replicates", reps)
        opt, cor = {}, {}
        for lab in self.labels:
            diffs = [r["metrics"][lab][0] - r["metrics"][lab][1] for r in reps]
            opt[lab] = math.fsum(diffs) / len(diffs) if diffs else float("nan")
            cor[lab] = self.naive[lab] - opt[lab]
        object.__setattr__(self, "optimism", opt)
        object.__setattr__(self, "corrected", cor)

    @property
    def n_success(self) -> int:
        return len(self.replicates)

    def to_dict(self) -> dict[str, Any]:
        return {
            "B": self.B,
            "seed": self.seed,
            "n_success": self.n_success,
            "metrics": [
                {"label": lab, "metric": m, "horizon": h, "naive": self.naive[lab],
                 "optimism": self.optimism[lab], "corrected": self.corrected[lab]}
                for lab, (m, h) in ((lab, _split_label(lab)) for lab in self.labels)
            ],
            "replicates": [
                {"replicate": r["replicate"], "cv_seed": r["cv_seed"],
                 "metrics": {lab: {"C_b": v[0], "C_0b": v[1]} for lab, v in r["metrics"].items()}}
                for r in self.replicates
            ],
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def replicate_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "metric", "horizon", "C_b", "C_0b"])
        for r in self.replicates:
            for lab in self.labels:
                metric, horizon = _split_label(lab)
                cb, c0b = r["metrics"][lab]
                w.writerow([r["replicate"], metric, "" if horizon is None else repr(horizon), repr(cb), repr(c0b)])
        return buf.getvalue()


def _label(row: dict) -> str:
    if row["metric"] == "C_INDEX":
        return "C" if row["horizon"] is None else f"C(tau={row['horizon']:.15g})"
    return f"tdAUC({row['horizon']:.15g})"


def _split_label(lab: str) -> tuple[str, float | None]:
    if lab.startswith("tdAUC("):
        return "TDAUC", float(lab[6:-1])
    if lab.startswith("C(tau="):
        return "C_INDEX", float(lab[6:-1])
    return "C_INDEX", None


def _metric_values(lp, surv, config: PipelineConfig) -> dict[str, float]:
    rows = evaluate(lp, surv, config.metrics, config.span)
    out = {}
    for row in rows:
        if row["flags"]:
            raise MetricError(row["flags"])
        out[_label(row)] = float(row["value"])
    return out


def _replicate(task):
    study, plan, b, resampler = task
    ss = replicate_seed(plan.seed, b, plan.B)
    rng = np.random.default_rng(ss)
    cv_seed = int(rng.integers(2**31 - 1))
    try:
        drawn = resampler(study.subject_ids, rng)
        rep = resample_study(study, drawn)
        model = fit_prc(rep, plan.pipeline, seed=cv_seed, workers=1)
        c_b = _metric_values(model.cox.train_lp, rep.survival, plan.pipeline)
        c_0b = _metric_values(model.score_study(study), study.survival, plan.pipeline)
    except REPLICATE_ERRORS as exc:
        return {"replicate": b, "cv_seed": cv_seed, "error": f"{type(exc).__name__}: {exc}",
                "where": traceback.format_exc(limit=3).splitlines()[-1]}
    return {"replicate": b, "cv_seed": cv_seed, "metrics": {k: (c_b[k], c_0b[k]) for k in c_b}}


def run_cbocp(study: Study, plan: BootstrapPlan, seed: int | None = None, workers: int = 1,
              resampler: Callable = cluster_bootstrap_sample, model: PrcModel | None = None,
              replicates: Sequence[int] | None = None) -> ValidationReport:
    """Optimism-corrected performance of the pipeline ``plan.pipeline``.

    ``seed`` is the cross-validation seed of the fit on the original data
    (default: ``plan.seed``); a previously fitted ``model`` may be supplied
    instead. ``replicates`` restricts the run to a subset of replicate
    indices (each replicate's stream depends only on ``plan.seed`` and its
    index).
    """
    seed = plan.seed if seed is None else seed
    if model is None:
        model = fit_prc(study, plan.pipeline, seed=seed, workers=workers)
    naive = _metric_values(model.cox.train_lp, study.survival, plan.pipeline)
    labels = tuple(naive)
    idx = list(range(plan.B)) if replicates is None else list(replicates)
    results = parallel_map(_replicate, [(study, plan, b, resampler) for b in idx], workers)
    ok = [r for r in results if "metrics" in r]
    failed = [r for r in results if "error" in r]
    for f in failed:
        log.warning("bootstrap replicate %d failed: %s", f["replicate"], f["error"])
    if len(failed) > FAILURE_CEILING * len(idx):
        raise ValidationError(f"{len(failed)} of {len(idx)} bootstrap replicates failed "
                              f"(ceiling {FAILURE_CEILING:.0%}); first error: {failed[0]['error']}")
    return ValidationReport(labels, naive, ok, failed, plan.B, plan.seed)
