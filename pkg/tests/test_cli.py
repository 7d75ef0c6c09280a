import json
import os
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from fqr.cli import build_parser, main, parse_levels
from fqr.errors import InvalidConfig
from fqr.funcdata import make_grid

# p-value of the seeded null dataset below, frozen from the first verified run.
GOLDEN_P = 0.686406036079995


def _dataset(tmp_path, name="d", **flags):
    cov, resp = tmp_path / f"{name}_cov.csv", tmp_path / f"{name}_resp.csv"
    argv = ["simulate", "dataset", "--covariates-out", str(cov), "--responses-out", str(resp)]
    for k, v in flags.items():
        argv += [f"--{k}", str(v)]
    assert main(argv) == 0
    return str(cov), str(resp)


@pytest.fixture(scope="module")
def null_data(tmp_path_factory):
    return _dataset(tmp_path_factory.mktemp("null"), n=300, seed=7)


def test_parse_levels():
    assert parse_levels("U1") == (0.1, 0.2, 0.3, 0.4)
    assert parse_levels("U2") == (0.1, 0.2, 0.6, 0.7)
    assert parse_levels("0.25, 0.75") == (0.25, 0.75)
    with pytest.raises(InvalidConfig):
        parse_levels("a,b")


def test_parser_subcommands():
    parser = build_parser()
    for cmd in (["test", "a", "b"], ["fit", "a", "b"], ["composite", "a", "b"], ["bootstrap", "a", "b"], ["cv", "a", "b"]):
        assert parser.parse_args(cmd).command == cmd[0]
    assert parser.parse_args(["simulate", "power"]).kind == "power"


def test_golden_p_value(null_data, capsys):
    assert main(["test", *null_data, "--levels", "U1"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["df"] == 9 and payload["K"] == 3
    assert abs(payload["p_value"] - GOLDEN_P) < 1e-9


def test_out_file_and_printed_p_value(null_data, tmp_path, capsys):
    out = tmp_path / "wald.json"
    assert main(["test", *null_data, "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith("p_value ")
    assert abs(float(printed.split()[1]) - GOLDEN_P) < 1e-5
    assert set(json.loads(out.read_text())) == {"statistic", "df", "p_value", "K", "levels"}


def test_dump_intermediates(null_data, tmp_path):
    d = tmp_path / "dump"
    assert main(["test", *null_data, "--dump", str(d), "--out", str(tmp_path / "w.json")]) == 0
    names = sorted(os.listdir(d))
    assert names == sorted(
        ["mean.csv", "covariance.csv", "noise_variance.csv", "eigenvalues.csv", "eigenfunctions.csv", "scores.csv"]
    )
    scores = pd.read_csv(d / "scores.csv")
    assert list(scores.columns) == ["subject_id", "xi1", "xi2", "xi3"] and len(scores) == 300


def test_strong_alternative_rejects(tmp_path, capsys):
    data = _dataset(tmp_path, n=1000, gamma=1.5, seed=3)
    assert main(["test", *data]) == 0
    assert json.loads(capsys.readouterr().out)["p_value"] < 0.01


def test_missing_response_file(null_data, tmp_path, capsys):
    code = main(["test", null_data[0], str(tmp_path / "absent.csv")])
    assert code == 2
    assert "MissingSubject or file not found" in capsys.readouterr().err


def test_missing_subject(null_data, tmp_path, capsys):
    resp = pd.read_csv(null_data[1]).iloc[1:]
    path = tmp_path / "short.csv"
    resp.to_csv(path, index=False)
    assert main(["test", null_data[0], str(path)]) == 2
    assert "loading data" in capsys.readouterr().err


def test_numerical_failure_exit_code(null_data, tmp_path, capsys):
    cov = pd.read_csv(null_data[0])
    cov["w"] = np.round(cov["t"], 3)  # every subject has the same curve
    path = tmp_path / "flat.csv"
    cov.to_csv(path, index=False)
    out = tmp_path / "never.json"
    assert main(["test", str(path), null_data[1], "--out", str(out)]) == 3
    assert "RankDeficientDesign" in capsys.readouterr().err
    assert not out.exists()


def test_failure_keeps_existing_output(null_data, tmp_path):
    out = tmp_path / "keep.json"
    out.write_text("previous\n")
    assert main(["test", null_data[0], str(tmp_path / "absent.csv"), "--out", str(out)]) == 2
    assert out.read_text() == "previous\n"
    assert os.listdir(tmp_path) == ["keep.json"]


def test_invalid_levels_exit_2(null_data, capsys):
    assert main(["test", *null_data, "--levels", "0.5"]) == 2
    assert main(["test", *null_data, "--levels", "0.4,0.2"]) == 2


def test_config_file_and_flag_precedence(null_data, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"levels": "0.2,0.4", "pve": 0.9}))
    assert main(["test", *null_data, "--config", str(cfg)]) == 0
    assert json.loads(capsys.readouterr().out)["levels"] == [0.2, 0.4]
    assert main(["test", *null_data, "--config", str(cfg), "--levels", "U1"]) == 0
    assert json.loads(capsys.readouterr().out)["levels"] == [0.1, 0.2, 0.3, 0.4]
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["test", *null_data, "--config", str(cfg)]) == 2


def test_fit_recovers_median_slope(tmp_path):
    data = _dataset(tmp_path, n=2000, gamma=1.0, seed=0)
    out, js = tmp_path / "beta.csv", tmp_path / "theta.json"
    assert main(["fit", *data, "--levels", "0.5", "--out", str(out), "--json", str(js)]) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["tau", "t", "beta_hat", "se"]
    grid = make_grid(101)
    err = grid.integrate((frame["beta_hat"].to_numpy() - (grid.points - 0.5)) ** 2)
    assert float(err) < 0.05
    assert (frame["se"] > 0).all()
    assert set(json.loads(js.read_text())["theta"]) == {"0.5"}


def test_composite_single_level_matches_fit(null_data, tmp_path):
    comp, js = tmp_path / "comp.json", tmp_path / "fit.json"
    for method in ("QAE", "CRQ"):
        assert main(["composite", *null_data, "--levels", "0.3", "--method", method, "--out", str(comp)]) == 0
        assert main(["fit", *null_data, "--levels", "0.3", "--out", str(tmp_path / "b.csv"), "--json", str(js)]) == 0
        a = json.loads(comp.read_text())["theta"]["0.3"]
        b = json.loads(js.read_text())["theta"]["0.3"]
        np.testing.assert_allclose(a, b, atol=1e-7)


def test_composite_payload(null_data, capsys):
    assert main(["composite", *null_data, "--method", "CRQ"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["method"] == "CRQ" and len(payload["intercepts"]) == 4
    assert len(payload["shared_slope"]) == payload["K"]


def test_bootstrap_and_cv(null_data, tmp_path):
    b, c = tmp_path / "boot.csv", tmp_path / "cv.csv"
    assert main(["bootstrap", *null_data, "--levels", "0.5", "--B", "3", "--methods", "RQ,CRQ", "--out", str(b)]) == 0
    boot = pd.read_csv(b)
    assert list(boot.columns) == ["method", "tau", "t", "mean", "se"]
    assert set(boot["method"]) == {"RQ", "CRQ"} and len(boot) == 2 * 101
    assert main(["cv", *null_data, "--levels", "0.8,0.9", "--reps", "4", "--out", str(c)]) == 0
    cv = pd.read_csv(c)
    assert list(cv["tau"]) == [0.8, 0.9] and "QAE_se" in cv.columns


def test_simulate_type1_deterministic(tmp_path):
    argv = ["simulate", "type1", "--n", "150", "--reps", "4", "--seed", "7", "--methods", "adjusted_wald,ssqr"]
    paths = []
    for i, workers in enumerate(("1", "1", "2")):
        p = tmp_path / f"t{i}.csv"
        assert main(argv + ["--workers", workers, "--out", str(p)]) == 0
        paths.append(p.read_bytes())
    assert paths[0] == paths[1] == paths[2]
    frame = pd.read_csv(tmp_path / "t0.csv")
    assert {"alpha_0.05", "mc_stderr_0.05", "failure_rate"} <= set(frame.columns)


def test_simulate_power_and_validation(tmp_path, capsys):
    out = tmp_path / "power.csv"
    assert main(["simulate", "power", "--gamma", "1", "--sizes", "100,150", "--reps", "2", "--out", str(out)]) == 0
    assert pd.read_csv(out).columns[:4].tolist() == ["n", "method", "gamma", "power"]
    assert main(["simulate", "power", "--gamma", "0", "--reps", "2"]) == 2
    assert main(["simulate", "type1", "--sigma", "-1"]) == 2
    assert main(["simulate", "type1", "--workers", "0"]) == 2


def test_installed_entry_point(null_data):
    proc = subprocess.run([sys.executable, "-m", "fqr.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("fqr ")
    proc = subprocess.run([sys.executable, "-m", "fqr.cli", "test", *null_data], capture_output=True, text=True)
    assert proc.returncode == 0
    assert abs(json.loads(proc.stdout)["p_value"] - GOLDEN_P) < 1e-9
