import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from spmedoe.artifacts import read_columns, verify_manifest
from spmedoe.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def produced_dir(out):
    return Path(out.strip().splitlines()[-1])


@pytest.fixture
def base(tmp_path, monkeypatch):
    monkeypatch.delenv("SPMEDOE_CONFIG", raising=False)
    return ["--out", str(tmp_path / "runs")]


def test_rest_simulation_has_constant_voltage(capsys, base):
    code, out, _ = run(capsys, *base, "simulate", "--profile", "rest", "--duration", "100")
    assert code == EXIT_OK
    d = produced_dir(out)
    cols = read_columns(d / "trajectory.csv")
    assert cols["voltage_V"].size == 20
    assert np.ptp(cols["voltage_V"]) == 0.0
    assert verify_manifest(d) == []


def test_design_simulate_estimate_round_trip(capsys, base, tmp_path):
    code, out, _ = run(capsys, *base, "design", "--horizon", "100", "--M", "2")
    assert code == EXIT_OK
    design = produced_dir(out) / "design_input.csv"
    assert json.loads((produced_dir(out) / "design.json").read_text())["feasible"]
    code, out, _ = run(capsys, *base, "simulate", "--input", str(design))
    assert code == EXIT_OK
    traj = produced_dir(out) / "trajectory.csv"
    code, out, _ = run(capsys, *base, "estimate", str(traj), "--params", "true")
    assert code == EXIT_OK
    est = json.loads((produced_dir(out) / "estimate.json").read_text())
    np.testing.assert_allclose(est["scaled"], 1.0, atol=1e-9)
    assert "kp" in out


def test_usage_errors(capsys, base, tmp_path):
    assert run(capsys, *base, "frobnicate")[0] == EXIT_USAGE
    assert run(capsys, *base, "simulate", "--input", str(tmp_path / "missing.csv"))[0] == EXIT_USAGE
    assert run(capsys, *base, "report", str(tmp_path))[0] == EXIT_USAGE


def test_config_error_lists_issues(capsys, base, tmp_path):
    bad = tmp_path / "bad.toml"
    from importlib import resources
    text = resources.files("spmedoe.presets").joinpath("paper.toml").read_text()
    bad.write_text(text.replace("eps_p = 0.385", "eps_p = 1.5"))
    code, _, err = run(capsys, "--config", str(bad), *base, "simulate")
    assert code == EXIT_CONFIG
    assert "cell.eps_p" in err and str(bad) in err


def test_env_var_selects_config(capsys, base, monkeypatch, tmp_path):
    monkeypatch.setenv("SPMEDOE_CONFIG", str(tmp_path / "nope.toml"))
    assert run(capsys, *base, "simulate")[0] == EXIT_CONFIG


def test_p2d_without_parameters_is_config_error(capsys, base):
    code, _, err = run(capsys, *base, "simulate", "--plant", "p2d")
    assert code == EXIT_CONFIG and "P2D cell parameters required" in err


def test_numerical_failure_exit_code(capsys, base):
    code, _, err = run(capsys, *base, "simulate", "--profile", "cc", "--rate", "3", "--duration", "2000")
    assert code == EXIT_NUMERICAL and err


def test_campaign_and_report(capsys, base):
    code, out, _ = run(capsys, *base, "campaign", "--method", "cc-discharge", "--n", "2",
                       "--duration", "200")
    assert code == EXIT_OK
    d = produced_dir(out)
    summary = json.loads((d / "summary.json").read_text())
    assert len(summary["experiments"]) == 2
    assert sorted(p.name for p in (d / "records").iterdir()) == ["experiment_01.csv", "experiment_02.csv"]
    assert verify_manifest(d) == []
    code, out, _ = run(capsys, "report", str(d))
    assert code == EXIT_OK
    for name in ("voltage.svg", "variances.svg", "distance.svg", "tables.txt"):
        assert (d / "report" / name).is_file()
    assert (d / "report" / "voltage.svg").read_text().lstrip().startswith("<?xml")
    assert verify_manifest(d) == []


def test_validate_reports_zero_for_true_parameters(capsys, base):
    code, out, _ = run(capsys, *base, "validate", "--duration", "200")
    assert code == EXIT_OK and "0.0000 mV" in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "spmedoe", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "campaign" in res.stdout
