import json

import pytest

from fallrisk import __version__
from fallrisk.cli import main


def _files(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_summarize_bundled(tmp_path, capsys):
    assert main(["summarize", "--out", str(tmp_path / "s")]) == 0
    counts = json.loads((tmp_path / "s" / "summary.json").read_text())["counts"]
    assert (counts["n_patients"], counts["n_fallers"], counts["n_falls"]) == (99, 55, 335)
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert manifest["version"] == __version__ and "threads" not in manifest["config"]
    assert "99" in capsys.readouterr().out


def test_fit_intercept_only(tmp_path):
    assert main(["fit", "--out", str(tmp_path / "f")]) == 0
    fit = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert len(fit["coefficients"]) == 1 and fit["sigma2_grid"] == []


def test_fit_stage2_has_grid(tmp_path):
    assert main(["fit", "--out", str(tmp_path / "f"), "--stage", "2"]) == 0
    fit = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert fit["sigma2_grid"] and "sigma2_posterior_mean" in fit


def test_bad_csv_exit_2(tmp_path, capsys):
    patients = tmp_path / "p.csv"
    patients.write_text("patient_id,age\nA,70\n")
    falls = tmp_path / "f.csv"
    falls.write_text("")
    code = main(["fit", "--out", str(tmp_path / "o"), "--patients", str(patients),
                 "--falls", str(falls)])
    assert code == 2
    assert "missing column" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unknown_variable_exit_2(tmp_path):
    assert main(["fit", "--out", str(tmp_path / "o"), "--variables", "shoe_size"]) == 2


def test_numeric_failure_exit_3(tmp_path, monkeypatch):
    from fallrisk import cli
    from fallrisk.exceptions import SingularHessian

    def boom(*args, **kwargs):
        raise SingularHessian("forced")

    monkeypatch.setattr(cli, "fit_design", boom)
    assert main(["fit", "--out", str(tmp_path / "o")]) == 3


def test_seed_required(tmp_path):
    assert main(["cv", "--out", str(tmp_path / "o")]) == 2


def test_select_outputs(tmp_path):
    out = tmp_path / "sel"
    assert main(["select", "--out", str(out), "--pool", "tinetti_gait"]) == 0
    trace = json.loads((out / "trace.json").read_text())
    assert [s["chosen"] for s in trace["steps"]] == ["tinetti_gait", "STOP"]
    table = (out / "bma_top5.txt").read_text().splitlines()
    assert table[-1].startswith("Weight")


def test_simulate_recovers_coefficients(tmp_path):
    config = tmp_path / "sim.json"
    config.write_text(json.dumps({
        "schema": [{"name": "x", "kind": "CONTINUOUS", "stage": "BASELINE"}],
        "stage1": {"intercept": -0.5, "coefficients": {"x": 1.0}},
        "falls_per_faller": {"distribution": "fixed", "n": 1},
    }))
    sim = tmp_path / "sim"
    assert main(["simulate", "--out", str(sim), "--seed", "4", "--config", str(config),
                 "--n-patients", "2000"]) == 0
    fit_dir = tmp_path / "fit"
    assert main(["fit", "--out", str(fit_dir), "--patients", str(sim / "patients.csv"),
                 "--falls", str(sim / "falls.csv"), "--schema", str(sim / "schema.json"),
                 "--variables", "x"]) == 0
    truth = json.loads((sim / "truth.json").read_text())["stage1"]
    coefs = json.loads((fit_dir / "fit.json").read_text())["coefficients"]
    for row, true in zip(coefs, [truth["(intercept)"], truth["x"]]):
        assert abs(row["mean"] - true) <= 3 * row["sd"]


def test_verify_pass_and_fail(tmp_path):
    assert main(["verify", "--out", str(tmp_path / "v"), "--seed", "1",
                 "--variables", "tinetti_gait"]) == 0
    result = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert result["pass"] and result["tolerance"] == 0.1
    assert set(result) >= {"main_value", "oracle_value", "discrepancy", "tolerance", "pass"}
    assert main(["verify", "--out", str(tmp_path / "v0"), "--seed", "1",
                 "--variables", "tinetti_gait", "--tolerance", "0"]) == 1


def test_cv_degenerate_lists_skipped(tmp_path):
    patients = tmp_path / "p.csv"
    patients.write_text("patient_id,x\nA,1\nB,2\nC,3\n")
    falls = tmp_path / "f.csv"
    falls.write_text("patient_id,fall_index,fall_clock_time,fall_time_category,location,"
                     "glasses,injured\nA,1,,MORNING,INSIDE,,0\n")
    schema = tmp_path / "s.json"
    schema.write_text(json.dumps([{"name": "x", "kind": "CONTINUOUS"}]))
    out = tmp_path / "cv"
    assert main(["cv", "--out", str(out), "--seed", "1", "--patients", str(patients),
                 "--falls", str(falls), "--schema", str(schema)]) == 0
    report = json.loads((out / "report.json").read_text())["reports"]["fixed"]
    assert len(report["skipped_folds"]) == 1


@pytest.mark.parametrize("threads", ["1", "3"])
def test_cv_deterministic(tmp_path, threads):
    args = ["cv", "--seed", "7", "--variables", "tinetti_gait,fearful"]
    main(args + ["--out", str(tmp_path / "a"), "--threads", "1"])
    main(args + ["--out", str(tmp_path / "b"), "--threads", threads])
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
