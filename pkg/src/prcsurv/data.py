"""Data containers and CSV ingestion for longitudinal biomarkers and survival outcomes.

Three CSV files describe a study:

* longitudinal measurements in long format (``subject, age, <item>...``),
* survival outcomes (``subject, baseline_age, time, status``),
* the item map (``item, process``) linking each measured item to the latent
  process it measures.

Missing cells are written as an empty field or ``NA`` and are stored as NaN.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DataError",
    "ParseError",
    "SchemaError",
    "DomainError",
    "AlignmentError",
    "ItemMap",
    "LongitudinalDataset",
    "SurvivalDataset",
    "Study",
    "load_item_map",
    "load_longitudinal",
    "load_survival",
    "write_item_map",
    "write_longitudinal",
    "write_survival",
    "align",
]

MISSING_TOKENS = ("", "NA")


class DataError(ValueError):
    """Base class for invalid input data."""


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class DomainError(DataError):
    pass


class AlignmentError(DataError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _fmt(x: float) -> str:
    # repr round-trips float64 exactly
    if math.isnan(x):
        return "NA"
    return repr(float(x))


def _parse_float(cell: str, row: int, col: str, path) -> float:
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise ParseError(
            f"{path}: row {row}, column {col!r}: cannot parse {cell!r} as a number"
        ) from None


# --------------------------------------------------------------------------
# Item map
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ItemMap:
    """Ordered mapping item name -> latent process name.

    Item order is the insertion order; processes are ordered by their first
    item.
    """

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        items = [i for i, _ in self.entries]
        if len(set(items)) != len(items):
            dup = sorted({i for i in items if items.count(i) > 1})
            raise SchemaError(f"duplicate items in item map: {dup}")
        for item, proc in self.entries:
            if not item or not proc:
                raise SchemaError("item and process names must be non-empty")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str] | Iterable[tuple[str, str]]) -> "ItemMap":
        pairs = mapping.items() if isinstance(mapping, Mapping) else mapping
        return cls(tuple((str(i), str(p)) for i, p in pairs))

    @classmethod
    def identity(cls, items: Sequence[str]) -> "ItemMap":
        """One process per item (the r_s = 1 case)."""
        return cls(tuple((i, i) for i in items))

    @property
    def items(self) -> tuple[str, ...]:
        return tuple(i for i, _ in self.entries)

    @property
    def processes(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for _, p in self.entries:
            seen.setdefault(p, None)
        return tuple(seen)

    @property
    def p(self) -> int:
        return len(self.processes)

    def items_of(self, process: str) -> tuple[str, ...]:
        return tuple(i for i, p in self.entries if p == process)

    def process_of(self, item: str) -> str:
        for i, p in self.entries:
            if i == item:
                return p
        raise KeyError(item)

    @property
    def r(self) -> dict[str, int]:
        """Number of items per process."""
        out = {p: 0 for p in self.processes}
        for _, p in self.entries:
            out[p] += 1
        return out

    def __len__(self) -> int:
        return len(self.entries)


def load_item_map(path) -> ItemMap:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["item", "process"]:
            raise SchemaError(f"{path}: header must be 'item,process'")
        pairs = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ParseError(f"{path}: row {lineno}: expected 2 columns")
            pairs.append((row[0].strip(), row[1].strip()))
    return ItemMap(tuple(pairs))


def write_item_map(item_map: ItemMap, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item", "process"])
        w.writerows(item_map.entries)


# --------------------------------------------------------------------------
# Longitudinal measurements
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """Long-format repeated measurements.

    Rows are sorted by (subject, age). ``values`` is ``(n_rows, n_items)``
    with NaN for missing cells.
    """

    subject: np.ndarray
    age: np.ndarray
    values: np.ndarray
    items: tuple[str, ...]
    subject_ids: tuple[str, ...] = field(init=False)
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        subject = np.asarray(self.subject, dtype=object).astype(str)
        age = np.asarray(self.age, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape != (len(subject), len(self.items)):
            raise SchemaError("values must have shape (n_rows, n_items)")
        if age.shape != subject.shape:
            raise SchemaError("age and subject must have the same length")
        if len(subject) == 0:
            raise SchemaError("longitudinal dataset has no rows")
        if not np.all(np.isfinite(age)):
            raise DomainError("ages must be finite")
        if np.any(np.isinf(values)):
            raise DomainError("item values must be finite or missing")
        empty = np.all(np.isnan(values), axis=1)
        if np.any(empty):
            k = int(np.flatnonzero(empty)[0])
            raise SchemaError(f"row for subject {subject[k]!r} at age {age[k]} has no observed values")
        if any(s == "" for s in subject):
            raise SchemaError("subject ids must be non-empty")
        order = np.lexsort((age, subject))
        subject, age, values = subject[order], age[order], values[order]
        ids, starts = np.unique(subject, return_index=True)
        offsets = np.append(starts, len(subject))
        object.__setattr__(self, "subject", _freeze(subject))
        object.__setattr__(self, "age", _freeze(age))
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in ids))
        object.__setattr__(self, "offsets", _freeze(offsets))

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_rows(self) -> int:
        return len(self.age)

    @property
    def visit_counts(self) -> np.ndarray:
        """m_i for every subject, in ``subject_ids`` order."""
        return np.diff(self.offsets)

    def subject_index(self) -> np.ndarray:
        """Integer subject code for every row."""
        return np.repeat(np.arange(self.n_subjects), self.visit_counts)

    def item_index(self, names: Sequence[str]) -> list[int]:
        pos = {n: k for k, n in enumerate(self.items)}
        try:
            return [pos[n] for n in names]
        except KeyError as exc:
            raise SchemaError(f"unknown item {exc.args[0]!r}") from None

    def rows_of(self, subject_id: str) -> slice:
        k = self.subject_ids.index(subject_id)
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def baseline_values(self) -> np.ndarray:
        """First-visit values per subject, ``(n_subjects, n_items)``."""
        return self.values[self.offsets[:-1]]

    def select_subjects(self, ids: Sequence[str]) -> "LongitudinalDataset":
        keep = np.isin(self.subject, np.asarray(list(ids), dtype=str))
        return LongitudinalDataset(self.subject[keep], self.age[keep], self.values[keep], self.items)


def load_longitudinal(path, item_map: ItemMap) -> LongitudinalDataset:
    """Read a long-format measurement CSV and validate it against ``item_map``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header[:2] != ["subject", "age"]:
            raise SchemaError(f"{path}: header must start with 'subject,age'")
        items = header[2:]
        if not items:
            raise SchemaError(f"{path}: no item columns")
        mapped = set(item_map.items)
        unknown = [i for i in items if i not in mapped]
        if unknown:
            raise SchemaError(f"{path}: item columns not in item map: {unknown}")
        absent = [i for i in item_map.items if i not in set(items)]
        if absent:
            raise SchemaError(f"{path}: item map entries without a column: {absent}")
        if len(set(items)) != len(items):
            raise SchemaError(f"{path}: duplicate item columns")
        subj, ages, vals = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {lineno}: expected {len(header)} cells, got {len(row)}")
            sid = row[0].strip()
            if not sid:
                raise SchemaError(f"{path}: row {lineno}: empty subject id")
            a = _parse_float(row[1], lineno, "age", path)
            if math.isnan(a):
                raise ParseError(f"{path}: row {lineno}, column 'age': missing age")
            subj.append(sid)
            ages.append(a)
            vals.append([_parse_float(c, lineno, items[k], path) for k, c in enumerate(row[2:])])
    if not subj:
        raise SchemaError(f"{path}: no measurement rows")
    # reorder columns to item-map order so downstream column order is fixed
    ordered = [items.index(i) for i in item_map.items]
    values = np.asarray(vals, dtype=np.float64)[:, ordered]
    return LongitudinalDataset(np.asarray(subj), np.asarray(ages), values, item_map.items)


def write_longitudinal(data: LongitudinalDataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "age", *data.items])
        for s, a, v in zip(data.subject, data.age, data.values):
            w.writerow([s, _fmt(a), *(_fmt(x) for x in v)])


# --------------------------------------------------------------------------
# Survival outcomes
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """One row per subject: baseline age, follow-up time from baseline, event flag."""

    subject: np.ndarray
    baseline_age: np.ndarray
    time: np.ndarray
    status: np.ndarray

    def __post_init__(self):
        subject = np.asarray(self.subject, dtype=object).astype(str)
        base = np.asarray(self.baseline_age, dtype=np.float64)
        time = np.asarray(self.time, dtype=np.float64)
        status = np.asarray(self.status)
        n = len(subject)
        if not (base.shape == time.shape == status.shape == (n,)):
            raise SchemaError("survival columns must have equal length")
        if n == 0:
            raise SchemaError("survival dataset has no rows")
        if len(set(subject.tolist())) != n:
            seen, dup = set(), []
            for s in subject:
                if s in seen:
                    dup.append(s)
                seen.add(s)
            raise SchemaError(f"duplicate subjects in survival data: {sorted(set(dup))}")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise DomainError("survival times must be finite and > 0")
        if not np.all(np.isfinite(base)):
            raise DomainError("baseline ages must be finite")
        status_f = status.astype(np.float64)
        if not np.all((status_f == 0) | (status_f == 1)):
            raise DomainError("status must be 0 or 1")
        order = np.argsort(subject, kind="stable")
        object.__setattr__(self, "subject", _freeze(subject[order]))
        object.__setattr__(self, "baseline_age", _freeze(base[order]))
        object.__setattr__(self, "time", _freeze(time[order]))
        object.__setattr__(self, "status", _freeze(status_f[order].astype(np.int64)))

    @property
    def n(self) -> int:
        return len(self.subject)

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return tuple(str(s) for s in self.subject)

    def summary(self) -> dict[str, int]:
        events = int(self.status.sum())
        return {"n": self.n, "events": events, "censored": self.n - events}

    def select(self, ids: Sequence[str]) -> "SurvivalDataset":
        keep = np.isin(self.subject, np.asarray(list(ids), dtype=str))
        return SurvivalDataset(self.subject[keep], self.baseline_age[keep], self.time[keep], self.status[keep])


def load_survival(path) -> SurvivalDataset:
    path = Path(path)
    cols = ["subject", "baseline_age", "time", "status"]
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in cols if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        idx = [header.index(c) for c in cols]
        subj, base, time, status = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {lineno}: expected {len(header)} cells, got {len(row)}")
            sid = row[idx[0]].strip()
            if not sid:
                raise SchemaError(f"{path}: row {lineno}: empty subject id")
            vals = [_parse_float(row[k], lineno, c, path) for k, c in zip(idx[1:], cols[1:])]
            if any(math.isnan(v) for v in vals):
                raise ParseError(f"{path}: row {lineno}: missing value")
            subj.append(sid)
            base.append(vals[0])
            time.append(vals[1])
            status.append(vals[2])
    return SurvivalDataset(np.asarray(subj), np.asarray(base), np.asarray(time), np.asarray(status))


def write_survival(data: SurvivalDataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "baseline_age", "time", "status"])
        for s, b, t, d in zip(data.subject, data.baseline_age, data.time, data.status):
            w.writerow([s, _fmt(b), _fmt(t), int(d)])


# --------------------------------------------------------------------------
# Joined view
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Study:
    """Aligned longitudinal + survival data sharing one sorted subject order."""

    longitudinal: LongitudinalDataset
    survival: SurvivalDataset
    item_map: ItemMap

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return self.survival.subject_ids

    @property
    def n(self) -> int:
        return self.survival.n


def align(longit: LongitudinalDataset, surv: SurvivalDataset, item_map: ItemMap | None = None) -> Study:
    """Check that both tables describe the same subjects and that no
    measurement is dated after the subject's event or censoring time."""
    a, b = set(longit.subject_ids), set(surv.subject_ids)
    if a != b:
        only_l = sorted(a - b)
        only_s = sorted(b - a)
        raise AlignmentError(
            f"subject sets differ: only in longitudinal {only_l}, only in survival {only_s}"
        )
    # both are sorted by subject id, so index k refers to the same subject
    end = surv.baseline_age + surv.time
    row_end = np.repeat(end, longit.visit_counts)
    late = longit.age > row_end
    if np.any(late):
        bad = sorted(set(longit.subject[late].tolist()))
        raise AlignmentError(f"measurements dated after event/censoring time for subjects {bad}")
    if item_map is None:
        item_map = ItemMap.identity(longit.items)
    elif item_map.items != longit.items:
        raise SchemaError("item map order does not match the dataset's item columns")
    return Study(longit, surv, item_map)
