from __future__ import annotations

import csv
import json

import pytest
import yaml

from synthcontrol.cli import main


def study_block(n_donors, lags=(2, 5, 8), **extra):
    preds = [{"kind": "covariate", "name": "z1"}] + [{"kind": "outcome-lag", "name": "y", "period": p} for p in lags]
    block = {
        "study": {
            "treated": "u00",
            "donors": [f"u{i:02d}" for i in range(1, n_donors + 1)],
            "outcome": "y",
            "t_start": 1,
            "training_end": 10,
            "T0": 16,
            "t_end": 25,
            "predictors": preds,
        },
        "seed": 0,
    }
    block.update(extra)
    return block


def simulate(tmp_path, name, random, study=None):
    sim = tmp_path / f"{name}.yaml"
    body = {"random": random}
    if study is not None:
        body["study"] = study
    sim.write_text(yaml.safe_dump(body))
    out = tmp_path / name
    assert main(["simulate", "--config", str(sim), "--out", str(out)]) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def clone_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("clone")
    rob = {"leave_one_out": True, "in_time": [12, 16], "restricted_pools": {"half": ["u01", "u02", "u03", "u05"]}}
    return simulate(tmp, "sim", {"n_donors": 8, "clone_of": 5, "seed": 7}, study_block(8, robustness=rob))


@pytest.fixture(scope="module")
def noisy_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("noisy")
    inference = {"mspe_inclusion_ratio": 4.0}
    return simulate(
        tmp, "sim", {"n_donors": 8, "sigma": 0.5, "effect": -5.0, "seed": 3}, study_block(8, inference=inference)
    )


def test_validate_ok(clone_dir, capsys):
    assert main(["validate", "--config", str(clone_dir / "study.yaml")]) == 0
    assert "0 violations" in capsys.readouterr().out


def test_validate_reports_violation(clone_dir, tmp_path, capsys):
    raw = yaml.safe_load((clone_dir / "study.yaml").read_text())
    raw["panel"] = str(clone_dir / "panel.csv")
    raw["study"]["excluded"] = [{"unit": "u03", "reason": "spillover-neighbor"}]
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(yaml.safe_dump(raw))
    assert main(["validate", "--config", str(cfg)]) == 1
    out = capsys.readouterr().out
    assert "u03" in out and "1 violations" in out


def test_missing_files_exit_2(tmp_path, capsys):
    assert main(["validate", "--config", str(tmp_path / "nope.yaml")]) == 2
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"panel": "missing.csv", **study_block(3)}))
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text("study: [unclosed")
    assert main(["fit", "--config", str(cfg)]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_arguments(clone_dir):
    assert main(["fit", "--config", str(clone_dir / "study.yaml"), "--jobs", "0"]) == 2
    assert main(["fit", "--config", str(clone_dir / "study.yaml"), "--seed", "-1"]) == 2


def test_fit_clone_end_to_end(clone_dir, tmp_path):
    out = tmp_path / "fit"
    assert main(["fit", "--config", str(clone_dir / "study.yaml"), "--out", str(out)]) == 0
    weights = {r["unit"]: float(r["weight"]) for r in read_csv(out / "weights.csv")}
    assert abs(sum(weights.values()) - 1) <= 1e-9
    assert min(weights.values()) >= -1e-12
    assert weights["u05"] >= 0.999
    summary = json.loads((out / "summary.json").read_text())
    assert summary["fit"]["pre_rmspe"] <= 1e-6
    assert len(summary["config_hash"]) == 64
    gaps = read_csv(out / "gaps.csv")
    assert [int(r["period"]) for r in gaps] == list(range(1, 26))
    assert {r["predictor"] for r in read_csv(out / "balance.csv")} >= {"z1", "y@2"}


def test_fit_reruns_byte_identical(noisy_dir, tmp_path):
    cfg = str(noisy_dir / "study.yaml")
    for name in ("a", "b"):
        assert main(["placebo", "--config", cfg, "--out", str(tmp_path / name), "--jobs", "1" if name == "a" else "2"]) == 0
    for f in ("weights.csv", "gaps.csv", "pvalues.csv", "placebo_gaps.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_placebo_outputs(noisy_dir, tmp_path, capsys):
    out = tmp_path / "p"
    assert main(["placebo", "--config", str(noisy_dir / "study.yaml"), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "end-of-sample p = 0 " in text
    rows = read_csv(out / "pvalues.csv")
    assert [int(r["period"]) for r in rows] == list(range(16, 26))
    assert all(0 <= float(r["p"]) <= 1 for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["inference"]["end_of_sample_p"] == 0.0
    units = {r["unit"] for r in read_csv(out / "placebo_gaps.csv")}
    assert units == {f"u{i:02d}" for i in range(9)}


def test_placebo_empty_reference_exit_4(clone_dir, tmp_path, capsys):
    out = tmp_path / "p"
    assert main(["placebo", "--config", str(clone_dir / "study.yaml"), "--out", str(out)]) == 4
    captured = capsys.readouterr()
    assert "mspe>4x" in captured.out
    assert "empty reference distribution" in captured.err
    assert (out / "exclusions.csv").exists()


def test_robustness_outputs(clone_dir, tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["robustness", "--config", str(clone_dir / "study.yaml"), "--out", str(out), "--jobs", "1"]) == 0
    text = capsys.readouterr().out
    assert "in-time:16: infeasible" in text
    ranking = read_csv(out / "robustness" / "ranking.csv")
    labels = [r["label"] for r in ranking]
    assert labels[0] == "loo:u05"
    assert {"in-time:12", "in-time:16", "pool:half"} <= set(labels)
    assert labels[-1] == "in-time:16"
    assert len(list((out / "robustness").glob("*.json"))) == len(labels)


def test_simulate_deterministic_and_seed_override(tmp_path):
    a = simulate(tmp_path, "a", {"n_donors": 4, "sigma": 1.0, "seed": 2})
    b = simulate(tmp_path, "b", {"n_donors": 4, "sigma": 1.0, "seed": 2})
    assert (a / "panel.csv").read_bytes() == (b / "panel.csv").read_bytes()
    sim = tmp_path / "a.yaml"
    assert main(["simulate", "--config", str(sim), "--out", str(tmp_path / "c"), "--seed", "3"]) == 0
    assert (tmp_path / "c" / "panel.csv").read_bytes() != (a / "panel.csv").read_bytes()


def test_simulate_explicit_model_zero_loadings(tmp_path):
    model = {
        "periods": [1, 2, 3, 4],
        "units": ["a", "b", "c"],
        "T0": 3,
        "eta": [1.0, 2.0, 3.0, 4.0],
        "pi": [[0.0], [0.0], [0.0], [0.0]],
        "Z": [[1.0], [2.0], [3.0]],
        "mu": [[1.0], [1.0], [1.0], [1.0]],
        "phi": [[0.0], [0.0], [0.0]],
    }
    sim = tmp_path / "m.yaml"
    sim.write_text(yaml.safe_dump({"model": model}))
    assert main(["simulate", "--config", str(sim), "--out", str(tmp_path / "m")]) == 0
    rows = read_csv(tmp_path / "m" / "panel.csv")
    by_period = {}
    for r in rows:
        if r["variable"] == "y":
            by_period.setdefault(r["period"], set()).add(r["value"])
    assert len(by_period) == 4
    assert all(len(v) == 1 for v in by_period.values())


def test_simulate_bad_spec(tmp_path):
    sim = tmp_path / "bad.yaml"
    sim.write_text(yaml.safe_dump({"random": {"n_donors": 3}, "model": {}}))
    assert main(["simulate", "--config", str(sim), "--out", str(tmp_path / "x")]) == 1
    sim.write_text(yaml.safe_dump({"random": {"n_donors": 3, "clone_of": 9}}))
    assert main(["simulate", "--config", str(sim), "--out", str(tmp_path / "x")]) == 1


def test_simulate_then_fit_recovers_effect(tmp_path):
    d = simulate(
        tmp_path, "e", {"n_donors": 50, "effect": -5.0, "seed": 11}, study_block(50, lags=range(1, 11))
    )
    out = tmp_path / "fit"
    assert main(["fit", "--config", str(d / "study.yaml"), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert abs(summary["fit"]["att"] + 5) <= 1e-6
