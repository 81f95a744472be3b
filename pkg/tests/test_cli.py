from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cpinfer.cli import main
from cpinfer.inference import rw_quantile
from cpinfer.io import write_csv
from cpinfer.simlab import generate_dataset, scenario


@pytest.fixture
def step_csv(tmp_path):
    y = np.zeros((60, 4))
    y[30:, :2] = 1.0
    p = tmp_path / "step.csv"
    write_csv(p, y, ["a", "b", "c", "d"])
    return p


@pytest.fixture
def noisy_csv(tmp_path):
    raw, _, _ = generate_dataset(scenario("A", T=300, p=20), 0)
    p = tmp_path / "noisy.csv"
    write_csv(p, raw)
    return p


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_detect_noiseless_step(step_csv, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["detect", "--input", str(step_csv), "--out", str(out)]) == 0
    taus = json.loads((out / "taus.json").read_text())
    assert taus["taus"] == [30] and taus["status"] == "change"
    for f in ("taus.json", "intervals.csv", "intervals.json", "bic_trace.csv", "run_meta.json"):
        assert (out / f).is_file()
    rows = read_rows(out / "intervals.csv")
    assert {r["regime"] for r in rows} == {"vanishing", "non_vanishing"}
    assert len(read_rows(out / "bic_trace.csv")) == 25
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["config"]["seed"] == 0 and "numpy" in meta["versions"]
    assert json.loads(capsys.readouterr().out)["taus"] == [30]


def test_detect_rerun_is_byte_identical(noisy_csv, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        assert main(["detect", "--input", str(noisy_csv), "--out", str(d), "--paths", "500", "--seed", "3"]) == 0
        outs.append(d)
    for f in ("taus.json", "intervals.csv", "intervals.json", "bic_trace.csv", "run_meta.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_detect_no_change(tmp_path):
    p = tmp_path / "flat.csv"
    write_csv(p, np.zeros((50, 3)))
    out = tmp_path / "o"
    assert main(["detect", "--input", str(p), "--out", str(out)]) == 0
    taus = json.loads((out / "taus.json").read_text())
    assert taus["taus"] == [] and taus["status"] == "no change"
    assert read_rows(out / "intervals.csv") == []


def test_detect_with_prelim_and_options(noisy_csv, tmp_path):
    out = tmp_path / "o"
    rc = main(["detect", "--input", str(noisy_csv), "--out", str(out), "--prelim", "95,205",
               "--regime", "vanishing", "--lambda-grid", "0:1:25", "--standardize", "--min-sep", "20"])
    assert rc == 0
    taus = json.loads((out / "taus.json").read_text())
    assert taus["taus_prelim"] == [95, 205]
    assert all(abs(a - b) <= 5 for a, b in zip(taus["taus"], [100, 200]))
    assert {r["regime"] for r in read_rows(out / "intervals.csv")} == {"vanishing"}
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["detector"]["lambda_grid"] == [0.0, 1.0, 25] and meta["detector"]["min_separation"] == 20


def test_intervals_with_given_taus(noisy_csv, tmp_path):
    out = tmp_path / "o"
    assert main(["intervals", "--input", str(noisy_csv), "--out", str(out), "--taus", "100,200",
                 "--paths", "500"]) == 0
    rows = read_rows(out / "intervals.csv")
    assert [int(r["tau"]) for r in rows] == [100, 200, 100, 200]
    assert not (out / "taus.json").exists()


def test_intervals_without_taus_runs_detection(step_csv, tmp_path):
    out = tmp_path / "o"
    assert main(["intervals", "--input", str(step_csv), "--out", str(out)]) == 0
    assert json.loads((out / "taus.json").read_text())["taus"] == [30]


def test_simulate_zero_noise_and_worker_independence(tmp_path):
    reports = []
    for w in (1, 8):
        out = tmp_path / f"s{w}"
        rc = main(["simulate", "--scenario", "B", "--reps", "4", "--paths", "300", "--out", str(out),
                   "--workers", str(w), "--seed", "2"])
        assert rc == 0
        reports.append((out / "metrics.json").read_text())
    assert reports[0] == reports[1]
    out = tmp_path / "z"
    assert main(["simulate", "--scenario", "A", "--reps", "1", "--zero-noise", "--out", str(out)]) == 0
    m = json.loads((out / "metrics.json").read_text())["metrics"]
    assert m["haus_mean"] == 0 and m["comp_coverage_vanishing"] == 1 and m["simul_coverage"] == 1
    assert list(read_rows(out / "metrics.csv")[0])[:3] == ["replicates", "haus_mean", "haus_sd"]


def test_quantile_commands(capsys, tmp_path):
    assert main(["quantile", "--alpha", "0.05"]) == 0
    assert abs(float(capsys.readouterr().out) - 11.03) < 0.02
    assert main(["quantile", "--regime", "non_vanishing", "--xi", "10", "--sigma2", "1"]) == 0
    assert capsys.readouterr().out.strip() == "0"
    assert main(["quantile", "--regime", "non_vanishing", "--xi", "1", "--sigma2", "1",
                 "--seed", "9", "--out", str(tmp_path)]) == 0
    q = int(capsys.readouterr().out)
    assert q == rw_quantile(1.0, 1.0, 0.05, "gaussian", 3000, 9)
    assert json.loads((tmp_path / "quantile.json").read_text())["quantile"] == q


def test_exit_codes(tmp_path, step_csv):
    assert main(["quantile", "--regime", "non_vanishing"]) == 2
    assert main(["quantile", "--alpha", "1.5"]) == 2
    assert main(["detect", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert main(["detect", "--input", str(bad), "--out", str(tmp_path)]) == 3
    assert main(["detect", "--input", str(step_csv), "--prelim", "0,30", "--out", str(tmp_path)]) == 2
    assert main(["detect", "--input", str(step_csv), "--lambda-grid", "0:0:3", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as e:
        main(["detect", "--input", str(step_csv), "--lambda-grid", "nope"])
    assert e.value.code == 2


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cpinfer.cli", "quantile"], capture_output=True, text=True)
    assert r.returncode == 0 and abs(float(r.stdout) - 11.0333) < 1e-3
