import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from prcsurv.cli import EXIT_FAILURE, EXIT_INPUT, EXIT_OK, main
from prcsurv.metrics import c_index

PIPE = {"variant": "PRC_LMM", "penalty": {"alpha": 0.0, "folds": 5, "n_lambda": 30},
        "metrics": [{"metric": "C_INDEX"}, {"metric": "TDAUC", "horizon": 2.0}, {"metric": "TDAUC", "horizon": 2.5}]}


def _config(path, **sections):
    path.write_text(json.dumps({"schema_version": 1, **sections}))
    return path


def _run(cmd, cfg, out, *extra):
    return main([cmd, "--config", str(cfg), "--out-dir", str(out), *extra])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def simdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg = _config(root / "sim.json", seed=5, simulate={"scenario": 1, "n": 80, "design": "FEW"})
    assert _run("simulate", cfg, root / "data", "--workers", "1") == EXIT_OK
    return root / "data"


@pytest.fixture(scope="module")
def fitted(simdir, tmp_path_factory):
    root = tmp_path_factory.mktemp("fit")
    data = {"longitudinal": str(simdir / "longitudinal.csv"), "survival": str(simdir / "survival.csv"),
            "item_map": str(simdir / "item_map.csv")}
    cfg = _config(root / "fit.json", seed=3, data=data, pipeline=PIPE)
    assert _run("fit", cfg, root / "out", "--workers", "1") == EXIT_OK
    return root / "out", data


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------


def test_simulate_outputs(simdir):
    assert {p.name for p in simdir.iterdir()} == {"longitudinal.csv", "survival.csv", "item_map.csv", "truth.json"}
    header = (simdir / "longitudinal.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["subject", "age"] and len(header) == 32
    truth = json.loads((simdir / "truth.json").read_text())
    assert truth["spec"]["id"] == 1 and truth["spec"]["design"] == "FEW"
    assert len(_rows(simdir / "survival.csv")) == 80


def test_simulate_both_designs_and_large_scenario(tmp_path):
    cfg = _config(tmp_path / "c.json", simulate={"scenario": 1, "n": 30})
    assert _run("simulate", cfg, tmp_path / "a", "--workers", "1") == EXIT_OK
    assert {p.name for p in (tmp_path / "a").iterdir()} == {"FEW", "MANY"}
    cfg = _config(tmp_path / "d.json", simulate={"scenario": 12, "n": 30, "design": "MANY"})
    assert _run("simulate", cfg, tmp_path / "b", "--workers", "1") == EXIT_OK
    header = (tmp_path / "b" / "longitudinal.csv").read_text().splitlines()[0].split(",")
    assert len(header) - 2 == 150


def test_simulate_custom_spec_and_replicates(tmp_path):
    spec = {"id": "custom", "model": "MLPMM", "p": 2, "r": 2, "n": 25, "design": "FEW", "n_active": 1,
            "cov": [[1.0, 0.2], [0.2, 0.5]], "sigma2_b": 0.3, "weibull_scale": 0.2, "censor_max": 6.0}
    cfg = _config(tmp_path / "c.json", seed=1, simulate={"spec": spec, "replicates": 2})
    assert _run("simulate", cfg, tmp_path / "o", "--workers", "1") == EXIT_OK
    t1 = json.loads((tmp_path / "o" / "rep001" / "truth.json").read_text())
    t2 = json.loads((tmp_path / "o" / "rep002" / "truth.json").read_text())
    for k, v in spec.items():
        assert t1["spec"][k] == v
    assert t1["weibull_scale"] == 0.2 and t1["censor_max"] == 6.0
    assert t1["event_time"] != t2["event_time"]


# --------------------------------------------------------------------------
# fit / predict / evaluate
# --------------------------------------------------------------------------


def test_fit_outputs(fitted):
    out, _ = fitted
    bundle = json.loads((out / "bundle.json").read_text())
    assert bundle["schema_version"] == 1 and bundle["seed"] == 3
    assert bundle["data"]["n"] == 80
    assert len(bundle["model"]["cox"]["columns"]) == 60
    rows = _rows(out / "metrics.csv")
    assert [r["metric"] for r in rows] == ["C_INDEX", "TDAUC", "TDAUC"]
    assert json.loads((out / "metrics.json").read_text()) == bundle["naive_metrics"]


def test_fit_then_predict_reproduces_naive_metrics(fitted, tmp_path):
    out, data = fitted
    cfg = _config(tmp_path / "p.json", predict={"bundle": str(out / "bundle.json"), "baseline": data["survival"],
                                                "longitudinal": data["longitudinal"], "times": [0.0, 1.0, 2.5]})
    assert _run("predict", cfg, tmp_path / "pred", "--workers", "1") == EXIT_OK
    lp_rows = _rows(tmp_path / "pred" / "linear_predictor.csv")
    scores = tmp_path / "scores.csv"
    scores.write_text("subject,score\n" + "".join(f"{r['subject']},{r['lp']}\n" for r in lp_rows))
    cfg = _config(tmp_path / "e.json", evaluate={"survival": data["survival"], "scores": str(scores),
                                                 "metrics": PIPE["metrics"]})
    assert _run("evaluate", cfg, tmp_path / "ev", "--workers", "1") == EXIT_OK
    assert (tmp_path / "ev" / "metrics.json").read_bytes() == (out / "metrics.json").read_bytes()
    curves = _rows(tmp_path / "pred" / "survival_curves.csv")
    assert len(curves) == 3 * 80
    assert all(float(r["survival"]) == 1.0 for r in curves if r["time"] == "0.0")


def test_evaluate_from_bundle(fitted, tmp_path):
    out, data = fitted
    cfg = _config(tmp_path / "e.json", evaluate={"survival": data["survival"], "bundle": str(out / "bundle.json"),
                                                 "longitudinal": data["longitudinal"]})
    assert _run("evaluate", cfg, tmp_path / "ev", "--workers", "1") == EXIT_OK
    assert (tmp_path / "ev" / "metrics.json").read_bytes() == (out / "metrics.json").read_bytes()
    km = _rows(tmp_path / "ev" / "kaplan_meier.csv")
    surv = np.array([float(r["survival"]) for r in km])
    assert np.all(np.diff(surv) <= 0) and surv[0] <= 1


def test_evaluate_scores_match_library(simdir, tmp_path):
    surv = _rows(simdir / "survival.csv")
    t = np.array([float(r["time"]) for r in surv])
    d = np.array([int(r["status"]) for r in surv])
    scores = tmp_path / "s.csv"
    scores.write_text("subject,score\n" + "".join(f"{r['subject']},{-float(tt)!r}\n" for r, tt in zip(surv, t)))
    cfg = _config(tmp_path / "e.json", evaluate={"survival": str(simdir / "survival.csv"), "scores": str(scores),
                                                 "metrics": [{"metric": "C_INDEX"}]})
    assert _run("evaluate", cfg, tmp_path / "ev", "--workers", "1") == EXIT_OK
    row = json.loads((tmp_path / "ev" / "metrics.json").read_text())[0]
    assert row["value"] == c_index(-t, (t, d))


def test_predict_empty_times_and_single_visit(fitted, tmp_path):
    out, data = fitted
    lines = (open(data["longitudinal"]).read().splitlines())
    one = tmp_path / "one.csv"
    first = lines[1].split(",")
    one.write_text(lines[0] + "\n" + ",".join(["new"] + first[1:]) + "\n")
    base = tmp_path / "base.csv"
    base.write_text("subject,baseline_age\nnew,0.0\nghost,0.0\n")
    cfg = _config(tmp_path / "p.json", predict={"bundle": str(out / "bundle.json"), "baseline": str(base),
                                                "longitudinal": str(one), "times": []})
    assert _run("predict", cfg, tmp_path / "pred", "--workers", "1") == EXIT_OK
    assert (tmp_path / "pred" / "survival_curves.csv").read_text().splitlines() == [
        "subject,time,survival,prior_mean,single_visit"]
    lp = {r["subject"]: r for r in _rows(tmp_path / "pred" / "linear_predictor.csv")}
    assert lp["new"]["single_visit"] == "1" and lp["ghost"]["prior_mean"] == "1"
    assert np.isfinite(float(lp["new"]["lp"]))


def test_predict_unknown_item(fitted, tmp_path, capsys):
    out, data = fitted
    bad = tmp_path / "bad.csv"
    bad.write_text("subject,age,zz_unknown\nnew,0,1.0\n")
    base = tmp_path / "base.csv"
    base.write_text("subject,baseline_age\nnew,0.0\n")
    cfg = _config(tmp_path / "p.json", predict={"bundle": str(out / "bundle.json"), "baseline": str(base),
                                                "longitudinal": str(bad), "times": [1.0]})
    assert _run("predict", cfg, tmp_path / "pred", "--workers", "1") == EXIT_INPUT
    assert "zz_unknown" in capsys.readouterr().err


# --------------------------------------------------------------------------
# validate
# --------------------------------------------------------------------------


def test_validate_report(fitted, tmp_path):
    _, data = fitted
    pipe = dict(PIPE, variant="BASELINE_PCOX")
    cfg = _config(tmp_path / "v.json", seed=4, data=data, pipeline=pipe, bootstrap={"B": 2})
    assert _run("validate", cfg, tmp_path / "v", "--workers", "1") == EXIT_OK
    rep = json.loads((tmp_path / "v" / "validation.json").read_text())
    assert rep["B"] == 2 and rep["n_success"] == 2
    assert len(_rows(tmp_path / "v" / "replicates.csv")) == 2 * 3
    for m in rep["metrics"]:
        assert m["corrected"] == m["naive"] - m["optimism"]


# --------------------------------------------------------------------------
# determinism and errors
# --------------------------------------------------------------------------


def test_every_subcommand_is_deterministic_across_worker_counts(fitted, tmp_path):
    out, data = fitted
    base = tmp_path / "base.csv"
    base.write_text(open(data["survival"]).read())
    configs = {
        "simulate": _config(tmp_path / "s.json", seed=2, simulate={"scenario": 7, "n": 30, "replicates": 2}),
        "fit": _config(tmp_path / "f.json", seed=1, data=data, pipeline=PIPE),
        "predict": _config(tmp_path / "p.json", predict={"bundle": str(out / "bundle.json"), "baseline": str(base),
                                                         "longitudinal": data["longitudinal"], "times": [1.0, 2.0]}),
        "validate": _config(tmp_path / "v.json", seed=1, data=data, pipeline=dict(PIPE, variant="BASELINE_PCOX"),
                            bootstrap={"B": 2}),
        "evaluate": _config(tmp_path / "e.json", evaluate={"survival": data["survival"],
                                                           "bundle": str(out / "bundle.json"),
                                                           "longitudinal": data["longitudinal"]}),
    }
    for cmd, cfg in configs.items():
        snaps = []
        for k, workers in enumerate(["1", "1", "2"]):
            d = tmp_path / f"{cmd}{k}"
            assert _run(cmd, cfg, d, "--workers", workers) == EXIT_OK
            snaps.append(_snapshot(d))
        assert snaps[0] and snaps[0] == snaps[1] == snaps[2], cmd


def test_exit_codes(tmp_path, capsys, fitted):
    _, data = fitted
    bad_version = tmp_path / "bad.json"
    bad_version.write_text(json.dumps({"schema_version": 99}))
    assert _run("fit", bad_version, tmp_path / "o") == EXIT_INPUT
    assert _run("fit", tmp_path / "missing.json", tmp_path / "o") == EXIT_INPUT
    not_json = tmp_path / "nj.json"
    not_json.write_text("{")
    assert _run("fit", not_json, tmp_path / "o") == EXIT_INPUT
    unknown = _config(tmp_path / "u.json", colour={})
    assert _run("fit", unknown, tmp_path / "o") == EXIT_INPUT
    missing_data = _config(tmp_path / "m.json", data={"longitudinal": str(tmp_path / "nope.csv"),
                                                      "survival": data["survival"]})
    assert _run("fit", missing_data, tmp_path / "o") == EXIT_INPUT
    capsys.readouterr()
    stubborn = dict(PIPE, optimizer={"max_iter": 1})
    cfg = _config(tmp_path / "c.json", data=data, pipeline=stubborn)
    assert _run("fit", cfg, tmp_path / "o", "--workers", "1") == EXIT_FAILURE
    assert capsys.readouterr().err.startswith("error [")
    assert main(["fit", "--config", str(cfg), "--workers", "0"]) == EXIT_INPUT


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "prcsurv", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("prcsurv ")
