"""Assembly of predicted random effects into the covariate matrix used by
the survival model."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from ..data import ItemMap, LongitudinalDataset, SchemaError
from .models import LmmFit, MlpmmFit, predict_ranef_batch


class Variant(str, Enum):
    LMM = "LMM"
    MLPMM_U = "MLPMM_U"
    MLPMM_UB = "MLPMM_UB"


class AssemblyError(SchemaError):
    pass


@dataclass(frozen=True, eq=False)
class RanefSummary:
    """Per-subject predicted random effects, one row per subject.

    ``prior_mean[i, k]`` marks subjects with no observation for the k-th
    fitted model (their random effects are the prior mean 0);
    ``single_visit[i, k]`` marks subjects observed at a single age, whose
    predicted slopes are shrunk all the way from a single time point.
    """

    variant: Variant
    columns: tuple[str, ...]
    matrix: np.ndarray
    subject_ids: tuple[str, ...]
    prior_mean: np.ndarray
    single_visit: np.ndarray

    @property
    def d(self) -> int:
        return len(self.columns)


def expected_columns(item_map: ItemMap, variant: Variant | str) -> tuple[str, ...]:
    """Column names of the summary, in their fixed order."""
    variant = Variant(variant)
    if variant is Variant.LMM:
        return tuple(c for it in item_map.items for c in (f"{it}:b0", f"{it}:b1"))
    cols = [c for p in item_map.processes for c in (f"{p}:u0", f"{p}:u1")]
    if variant is Variant.MLPMM_UB:
        r = item_map.r
        cols += [f"{p}/{it}:b" for p in item_map.processes if r[p] >= 2 for it in item_map.items_of(p)]
    return tuple(cols)


def fit_keys(item_map: ItemMap, variant: Variant | str) -> tuple[str, ...]:
    """Keys of the per-model fits a variant needs: items for LMM, processes otherwise."""
    return item_map.items if Variant(variant) is Variant.LMM else item_map.processes


def build_ranef_summary(
    fits: Mapping[str, LmmFit | MlpmmFit],
    data: LongitudinalDataset,
    item_map: ItemMap,
    variant: Variant | str,
) -> RanefSummary:
    variant = Variant(variant)
    keys = fit_keys(item_map, variant)
    missing = [k for k in keys if k not in fits]
    if missing:
        raise AssemblyError(f"no fitted model for {missing}")
    n = data.n_subjects
    shared, specific, flags, single = [], [], [], []
    for key in keys:
        fit = fits[key]
        if variant is Variant.LMM and not isinstance(fit, LmmFit):
            raise AssemblyError(f"variant LMM needs an LMM fit for item {key!r}")
        if variant is not Variant.LMM:
            r = item_map.r[key]
            if r == 1 and not isinstance(fit, LmmFit):
                raise AssemblyError(f"single-item process {key!r} must be fitted with an LMM")
            if r >= 2 and not (isinstance(fit, MlpmmFit) and fit.items == item_map.items_of(key)):
                raise AssemblyError(f"process {key!r} needs an MLPMM fit over {item_map.items_of(key)}")
        eta, empty = predict_ranef_batch(fit, data)
        shared.append(eta[:, :2])
        if isinstance(fit, MlpmmFit):
            specific.append(eta[:, 2:])
        flags.append(empty)
        single.append(_single_age(fit, data))
    blocks = list(shared)
    if variant is Variant.MLPMM_UB:
        blocks += specific
    matrix = np.hstack(blocks) if blocks else np.zeros((n, 0))
    cols = expected_columns(item_map, variant)
    assert matrix.shape[1] == len(cols)
    return RanefSummary(variant, cols, matrix, data.subject_ids, np.column_stack(flags), np.column_stack(single))


def _single_age(fit, data: LongitudinalDataset) -> np.ndarray:
    items = [fit.item] if isinstance(fit, LmmFit) else list(fit.items)
    obs = ~np.isnan(data.values[:, data.item_index(items)])
    rows = obs.any(axis=1)
    sidx = data.subject_index()[rows]
    lo = np.full(data.n_subjects, np.inf)
    hi = np.full(data.n_subjects, -np.inf)
    np.minimum.at(lo, sidx, data.age[rows])
    np.maximum.at(hi, sidx, data.age[rows])
    return np.isfinite(lo) & (lo == hi)
