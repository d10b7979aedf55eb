import json
import re
from pathlib import Path

import pytest

from idid import cli
from idid.data import write_dataset
from idid.inference import replicate_rng
from idid.report import WARNINGS
from idid.simulation import DgpCase, generate_case_data
from conftest import D8_ROWS


@pytest.fixture
def d8_csv(tmp_path):
    path = tmp_path / "d8.csv"
    path.write_text("t,z,d,y\n" + "".join(f"{t},{z},{d},{y:g}\n" for t, z, d, y in D8_ROWS))
    return path


def _summaries(tmp_path, exposure_means=(0.2, 0.3, 0.4, 0.8)):
    o, e = tmp_path / "o.csv", tmp_path / "e.csv"
    o.write_text("t,z,mean,se,n\n0,0,1,.1,100\n0,1,2,.1,100\n1,0,3,.1,100\n1,1,4.5,.1,100\n")
    rows = zip(((0, 0), (0, 1), (1, 0), (1, 1)), exposure_means)
    e.write_text("t,z,mean,se,n\n" + "".join(f"{t},{z},{m},.05,100\n" for (t, z), m in rows))
    return o, e


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_estimate_d8(d8_csv, capsys):
    code, out, _ = run(["estimate", "--data", d8_csv], capsys)
    rep = json.loads(out)
    assert code == 0
    assert rep["schema_version"] == "1.0"
    assert rep["results"][0]["estimate"] == 4.0
    assert rep["diagnostics"]["weak_id"]["kappa2_estimate"] == pytest.approx(1 / 3)
    assert "weak identification (κ² < 10)" in [w["message"] for w in rep["warnings"]]


def test_estimate_with_covariates_and_bootstrap(tmp_path, capsys):
    path = tmp_path / "sim.csv"
    write_dataset(generate_case_data(DgpCase("case1", 3000), replicate_rng(1, 0)), path)
    argv = ["estimate", "--data", path, "--covariates", "x", "--working-model", "linear",
            "--bootstrap", 10, "--seed", 4]
    code, out, _ = run(argv + ["--threads", 1], capsys)
    assert code == 0
    code2, out2, _ = run(argv + ["--threads", 8], capsys)
    assert out == out2
    rep = json.loads(out)
    semi = rep["results"][1]
    assert semi["method"] == "semiparametric" and set(semi["estimates"]) == {"intercept", "x"}
    assert semi["bootstrap"]["replications"] == 10
    assert rep["diagnostics"]["weak_id"]["covariates_included"] is True


def test_bootstrap_requires_seed(d8_csv, capsys):
    code, _, err = run(["estimate", "--data", d8_csv, "--bootstrap", 10], capsys)
    assert code == 1 and "seed" in json.loads(err)["message"]


def test_two_sample(tmp_path, capsys):
    o, e = _summaries(tmp_path)
    code, out, _ = run(["two-sample", "--outcome", o, "--exposure", e], capsys)
    rep = json.loads(out)
    assert code == 0
    assert rep["results"][0]["estimate"] == pytest.approx(0.5 / 0.3)
    assert "summary_covariance_unavailable" in [w["code"] for w in rep["warnings"]]


def test_two_sample_degenerate_exits_2(tmp_path, capsys):
    o, e = _summaries(tmp_path, exposure_means=(0.5, 0.5, 0.5, 0.5))
    code, _, err = run(["two-sample", "--outcome", o, "--exposure", e], capsys)
    assert code == 2
    assert json.loads(err)["error"] == "DegenerateTrend"


@pytest.mark.parametrize(
    "argv",
    [
        ["estimate"],
        ["estimate", "--data", "x.csv", "--no-such-flag"],
        ["frobnicate"],
        ["weak-id"],
        ["sensitivity", "--gamma-lower", "-1", "--gamma-upper", "1"],
    ],
)
def test_usage_errors_exit_1(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 1
    assert "error" in json.loads(err)


def test_invalid_data_exit_1(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("t,z,d,y\n0,0,2,1\n")
    code, _, err = run(["estimate", "--data", path], capsys)
    payload = json.loads(err)
    assert code == 1 and payload["error"] == "NonBinaryValue" and payload["row"] == 1


def test_weak_id_both_paths(d8_csv, tmp_path, capsys):
    _, e = _summaries(tmp_path)
    code, out, _ = run(["weak-id", "--data", d8_csv], capsys)
    assert code == 0 and json.loads(out)["diagnostics"]["weak_id"]["method"] == "first_stage_F"
    code, out, _ = run(["weak-id", "--exposure", e], capsys)
    assert json.loads(out)["diagnostics"]["weak_id"]["kappa2_estimate"] == pytest.approx(9.0)


def test_sensitivity_outputs(d8_csv, tmp_path, capsys):
    band = tmp_path / "band.csv"
    out_json = tmp_path / "s.json"
    code, _, _ = run(["sensitivity", "--data", d8_csv, "--gamma-lower", -1, "--gamma-upper", 1,
                      "--grid-points", 5, "--csv", band, "--out", out_json], capsys)
    assert code == 0
    lines = band.read_text().splitlines()
    assert lines[0] == "delta,estimate,ci_low,ci_high" and len(lines) == 6
    assert lines[4].startswith("0.5,3.5,")
    rep = json.loads(out_json.read_text())
    lo, hi = rep["results"][0]["union_ci"]
    assert lo < 3.0 and hi > 5.0


def test_sensitivity_two_sample(tmp_path, capsys):
    o, e = _summaries(tmp_path)
    code, out, _ = run(["sensitivity", "--outcome", o, "--exposure", e, "--gamma-lower", 0,
                        "--gamma-upper", 0.2, "--target", "time1_effect"], capsys)
    assert code == 0 and json.loads(out)["results"][0]["target"] == "time1_effect"


def test_simulate(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('case = "case1"\nn = 1500\nreplications = 3\nseed = 9\n')
    code, out, _ = run(["simulate", "--config", cfg], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split(",")[:9] == ["case", "scenario", "estimator", "bias", "sd", "se", "cp", "n_ok", "n_failed"]
    assert any(",semipar_constant," in line and "(pi, mu_y)" in line for line in lines)
    code, out2, _ = run(["simulate", "--config", cfg, "--threads", 2], capsys)
    assert out == out2


@pytest.mark.parametrize("body", ['case = "case1"\n', 'seed = 1\ncolour = "red"\n', 'seed = 1\ncase = "case9"\n'])
def test_simulate_bad_config(tmp_path, capsys, body):
    cfg = tmp_path / "c.toml"
    cfg.write_text(body)
    code, _, _ = run(["simulate", "--config", cfg], capsys)
    assert code == 1


def test_every_emitted_warning_is_catalogued():
    src = (Path(cli.__file__).parent / "cli.py").read_text()
    used = set(re.findall(r'warning\("([a-z_]+)"\)', src)) | {"weak_identification"}
    assert used <= set(WARNINGS)
