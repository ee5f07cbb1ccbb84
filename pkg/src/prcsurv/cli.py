"""Command-line interface.

Subcommands ``fit``, ``predict``, ``validate``, ``simulate`` and
``evaluate`` read one JSON configuration document (``--config``) and write
their results to ``--out-dir``. Relative paths inside the configuration are
resolved against the configuration file's directory.

Exit codes: 0 success, 2 invalid input (schema or domain error), 3 fitting
or validation failure (non-convergence, bootstrap failure ceiling).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import traceback
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .cox import CoxFitError
from .data import (DataError, ItemMap, SchemaError, align, load_item_map, load_longitudinal, load_survival,
                   write_item_map, write_longitudinal, write_survival)
from .metrics import MetricError, MetricRequest, evaluate, kaplan_meier
from .mixed.models import FitError
from .pipeline import ConvergenceError, PipelineConfig, PrcModel, fit_prc, naive_metrics
from .simulation import Design, ScenarioSpec, generate_study, scenario
from .validation import BootstrapPlan, ValidationError, run_cbocp

log = logging.getLogger("prcsurv")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_FAILURE = 0, 2, 3

_SECTIONS = {"schema_version", "seed", "data", "pipeline", "bootstrap", "predict", "simulate", "evaluate"}

_MODULE_TAGS = {
    "prcsurv.data": "data_model",
    "prcsurv.mixed": "mixed_models",
    "prcsurv.cox": "penalized_cox",
    "prcsurv.metrics": "metrics",
    "prcsurv.validation": "validation",
    "prcsurv.simulation": "simulation",
}


class ConfigError(SchemaError):
    pass


# --------------------------------------------------------------------------
# Configuration and file helpers
# --------------------------------------------------------------------------


class Config:
    def __init__(self, path: Path):
        self.path = path
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"configuration file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
        unknown = set(raw) - _SECTIONS
        if unknown:
            raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
        self.raw = raw

    def section(self, name: str, required=True) -> dict[str, Any]:
        sec = self.raw.get(name)
        if sec is None:
            if required:
                raise ConfigError(f"{self.path}: missing section {name!r}")
            return {}
        if not isinstance(sec, dict):
            raise ConfigError(f"{self.path}: section {name!r} must be an object")
        return sec

    def file(self, section: dict, key: str, required=True) -> Path | None:
        if key not in section or section[key] is None:
            if required:
                raise ConfigError(f"{self.path}: missing path {key!r}")
            return None
        p = Path(section[key])
        return p if p.is_absolute() else (self.path.parent / p)

    def seed(self, override: int | None) -> int:
        if override is not None:
            return override
        s = self.raw.get("seed", 0)
        if not isinstance(s, int):
            raise ConfigError("seed must be an integer")
        return s


def _header_items(path: Path) -> list[str]:
    with path.open(newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header or [h.strip() for h in header[:2]] != ["subject", "age"]:
        raise SchemaError(f"{path}: header must start with 'subject,age'")
    return [h.strip() for h in header[2:]]


def _load_item_map(cfg: Config, data: dict, longit_path: Path) -> ItemMap:
    p = cfg.file(data, "item_map", required=False)
    return load_item_map(p) if p is not None else ItemMap.identity(_header_items(longit_path))


def _load_study(cfg: Config):
    data = cfg.section("data")
    lp = cfg.file(data, "longitudinal")
    item_map = _load_item_map(cfg, data, lp)
    return align(load_longitudinal(lp, item_map), load_survival(cfg.file(data, "survival")), item_map)


def _load_baseline(path: Path):
    """subject and baseline_age columns of a CSV (other columns ignored)."""
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if "subject" not in header or "baseline_age" not in header:
            raise SchemaError(f"{path}: needs 'subject' and 'baseline_age' columns")
        i, j = header.index("subject"), header.index("baseline_age")
        ids, ages = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ages.append(float(row[j]))
            except (ValueError, IndexError):
                raise DataError(f"{path}: row {lineno}: invalid baseline_age") from None
            ids.append(row[i].strip())
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{path}: duplicate subject ids")
    order = np.argsort(np.asarray(ids, dtype=str), kind="stable")
    return tuple(ids[k] for k in order), np.asarray(ages, float)[order]


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def _write_rows(path: Path, header: list[str], rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])


def _write_metrics(out: Path, rows: list[dict], stem="metrics"):
    _dump_json(rows, out / f"{stem}.json")
    _write_rows(out / f"{stem}.csv", ["metric", "horizon", "value", "flags"],
                [[r["metric"], "" if r["horizon"] is None else r["horizon"], r["value"], r["flags"]] for r in rows])


def _pipeline_config(cfg: Config) -> PipelineConfig:
    return PipelineConfig.from_dict(cfg.section("pipeline", required=False))


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_fit(cfg: Config, seed: int, workers: int, out: Path) -> int:
    study = _load_study(cfg)
    pcfg = _pipeline_config(cfg)
    model = fit_prc(study, pcfg, seed=seed, workers=workers)
    rows = naive_metrics(model, study)
    bundle = {"schema_version": SCHEMA_VERSION, "package_version": __version__, "seed": seed,
              "data": study.survival.summary(), "model": model.to_dict(), "naive_metrics": rows}
    _dump_json(bundle, out / "bundle.json")
    _write_metrics(out, rows)
    return EXIT_OK


def cmd_predict(cfg: Config, seed: int, workers: int, out: Path) -> int:
    sec = cfg.section("predict")
    try:
        bundle = json.loads(cfg.file(sec, "bundle").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read model bundle: {exc}") from None
    if bundle.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError("model bundle has an unsupported schema_version")
    model = PrcModel.from_dict(bundle["model"])
    ids, ages = _load_baseline(cfg.file(sec, "baseline"))
    lp_path = cfg.file(sec, "longitudinal", required=False)
    longit = None
    if lp_path is not None:
        items = _header_items(lp_path)
        unknown = sorted(set(items) - set(model.item_map.items))
        if unknown:
            raise SchemaError(f"{lp_path}: unknown items {unknown}")
        longit = load_longitudinal(lp_path, model.item_map)
    times = np.asarray(sec.get("times", []), dtype=float)
    if times.ndim != 1 or np.any(~np.isfinite(times)) or np.any(times < 0):
        raise SchemaError("times must be a list of finite non-negative numbers")
    S, flags = model.predict_survival(longit, ids, ages, times)
    lp = model.linear_predictor(longit, ids, ages)
    _write_rows(out / "survival_curves.csv", ["subject", "time", "survival", "prior_mean", "single_visit"],
                [[s, float(t), float(S[i, k]), int(flags["prior_mean"][i]), int(flags["single_visit"][i])]
                 for i, s in enumerate(ids) for k, t in enumerate(times)])
    _write_rows(out / "linear_predictor.csv", ["subject", "lp", "prior_mean", "single_visit"],
                [[s, float(lp[i]), int(flags["prior_mean"][i]), int(flags["single_visit"][i])]
                 for i, s in enumerate(ids)])
    return EXIT_OK


def cmd_validate(cfg: Config, seed: int, workers: int, out: Path) -> int:
    study = _load_study(cfg)
    pcfg = _pipeline_config(cfg)
    bs = cfg.section("bootstrap")
    if set(bs) - {"B"}:
        raise ConfigError(f"unknown bootstrap settings {sorted(set(bs) - {'B'})}")
    try:
        plan = BootstrapPlan(B=int(bs.get("B", 100)), seed=seed, pipeline=pcfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = run_cbocp(study, plan, workers=workers)
    _dump_json(report.to_dict(), out / "validation.json")
    (out / "replicates.csv").write_text(report.replicate_csv())
    return EXIT_OK


def _write_study(sim, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    write_longitudinal(sim.longitudinal, out / "longitudinal.csv")
    write_survival(sim.survival, out / "survival.csv")
    write_item_map(sim.item_map, out / "item_map.csv")
    _dump_json(sim.truth_record(), out / "truth.json")


def cmd_simulate(cfg: Config, seed: int, workers: int, out: Path) -> int:
    sec = cfg.section("simulate")
    allowed = {"scenario", "n", "design", "spec", "replicates"}
    if set(sec) - allowed:
        raise ConfigError(f"unknown simulate settings {sorted(set(sec) - allowed)}")
    if ("scenario" in sec) == ("spec" in sec):
        raise ConfigError("simulate needs exactly one of 'scenario' (1-12) or 'spec' (custom)")
    reps = int(sec.get("replicates", 1))
    if reps < 1:
        raise ConfigError("replicates must be >= 1")
    if "spec" in sec:
        specs = {"": ScenarioSpec.from_dict(sec["spec"])}
    else:
        design = sec.get("design", "both")
        designs = list(Design) if design == "both" else [Design(design)]
        specs = {d.value: scenario(int(sec["scenario"]), n=int(sec.get("n", 300)), design=d) for d in designs}
    # every (design, replicate) dataset gets its own child stream
    streams = np.random.SeedSequence(seed).spawn(reps)
    for r in range(reps):
        rep_seed = int(streams[r].generate_state(1)[0])
        for name, spec in specs.items():
            sim = generate_study(spec, rep_seed)
            target = out
            if len(specs) > 1:
                target = target / name
            if reps > 1:
                target = target / f"rep{r + 1:03d}"
            _write_study(sim, target)
    return EXIT_OK


def cmd_evaluate(cfg: Config, seed: int, workers: int, out: Path) -> int:
    sec = cfg.section("evaluate")
    surv = load_survival(cfg.file(sec, "survival"))
    metrics = tuple(MetricRequest(**m) for m in sec["metrics"]) if "metrics" in sec else None
    span = sec.get("span")
    scores_path = cfg.file(sec, "scores", required=False)
    if scores_path is not None:
        with scores_path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"subject", "score"} <= set(reader.fieldnames):
                raise SchemaError(f"{scores_path}: needs 'subject' and 'score' columns")
            table = {r["subject"].strip(): float(r["score"]) for r in reader}
        missing = [s for s in surv.subject_ids if s not in table]
        if missing:
            raise SchemaError(f"no score for subjects {missing[:5]}")
        lp = np.array([table[s] for s in surv.subject_ids])
    else:
        bundle = json.loads(cfg.file(sec, "bundle").read_text())
        model = PrcModel.from_dict(bundle["model"])
        lp_path = cfg.file(sec, "longitudinal", required=False)
        longit = load_longitudinal(lp_path, model.item_map) if lp_path is not None else None
        lp = model.linear_predictor(longit, surv.subject_ids, surv.baseline_age)
        if metrics is None:
            metrics = model.config.metrics
            span = model.config.span if span is None else span
    if metrics is None:
        metrics = PipelineConfig().metrics
    rows = evaluate(lp, surv, metrics, span)
    _write_metrics(out, rows)
    km = kaplan_meier(surv)
    _write_rows(out / "kaplan_meier.csv", ["time", "n_risk", "n_events", "n_censored", "survival"],
                [[r["time"], r["n_risk"], r["n_events"], r["n_censored"], r["survival"]] for r in km.table()])
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def _module_tag(exc: BaseException) -> str:
    tb = exc.__traceback__
    name = "cli"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        for prefix, tag in _MODULE_TAGS.items():
            if mod.startswith(prefix):
                name = tag
        tb = tb.tb_next
    return name


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prcsurv", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="process pool size for per-model fits and bootstrap replicates")
        p.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = Config(args.config)
        seed = cfg.seed(args.seed)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, seed, args.workers, args.out_dir)
    except (DataError, MetricError) as exc:
        print(f"error [{_module_tag(exc)}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, ValidationError, FitError, CoxFitError) as exc:
        print(f"error [{_module_tag(exc)}]: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"error [cli]: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
