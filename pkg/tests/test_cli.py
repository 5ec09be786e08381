import csv
import json
import math

import pytest

from pchaos import cli
from pchaos.circle import lambda_k
from pchaos.output import file_sha256
from pchaos.rng import WrappedNoise, noise_spectrum

SMALL = {
    "kac": ["--n", "20", "--t", "1", "--replicas", "2", "--log-events", "true"],
    "circle": ["--n", "100", "--t", "1", "--replicas", "3", "--K", "16", "--snapshots", "3"],
    "averaging": ["--n", "200", "--events", "2000", "--Xi", "2", "--h", "0.5"],
    "boltzmann3": ["--n", "50", "--t", "1", "--snapshots", "3", "--gamma-family", "capped_linear",
                   "--gamma-params", "1,2", "--log-events", "true"],
    "speciation": ["--food-mass", "40", "--generations", "5"],
    "chaos-sweep": ["--model", "kac", "--ns", "6,12,24", "--replicas", "20", "--T", "0.5"],
    "t1-check": ["--N", "6", "--ell", "2", "--configs", "200", "--functions", "4"],
    "marginal-gap": ["--model", "averaging", "--ns", "8,16", "--replicas", "10", "--T", "0.5",
                     "--snapshots", "2", "--assert-decreasing", "false"],
}


def _csvs(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


@pytest.mark.parametrize("sub", list(SMALL))
def test_subcommand_is_deterministic_and_manifest_complete(sub, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(["--run-dir", str(a), sub, *SMALL[sub]]) == 0
    assert cli.run(["--run-dir", str(b), sub, *SMALL[sub]]) == 0
    ca, cb = _csvs(a), _csvs(b)
    assert ca and ca == cb
    man = json.loads((a / "manifest.json").read_text())
    assert man["status"] == "ok" and man["subcommand"] == sub
    assert man["backend"] in ("cython", "python") and man["version"].startswith("0.1.0+src.")
    for name, digest in man["files"].items():
        assert file_sha256(a / name) == digest
    assert set(ca) <= set(man["files"])


def test_kac_example_and_derived_run_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PCHAOS_OUT", str(tmp_path / "env"))
    assert cli.run(["kac", "--n", "100", "--t", "2", "--seed", "7"]) == 0
    d1 = capsys.readouterr().out.strip()
    assert d1.startswith(str(tmp_path / "env" / "kac-"))
    assert cli.run(["--out", str(tmp_path / "flag"), "kac", "--n", "100", "--t", "2", "--seed", "7"]) == 0
    d2 = capsys.readouterr().out.strip()
    assert d2.startswith(str(tmp_path / "flag"))
    from pathlib import Path

    assert _csvs(Path(d1)) == _csvs(Path(d2))
    rows = list(csv.DictReader(open(Path(d1) / "trajectory.csv")))
    assert all(abs(float(r["energy"]) - 100) < 1e-9 for r in rows)


def test_circle_supercritical_example(tmp_path, capsys):
    assert cli.run(["--run-dir", str(tmp_path), "circle", "--tau", "0.2", "--n", "2000", "--t", "20", "--seed", "1"]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    lam = float(lambda_k(noise_spectrum(WrappedNoise("gaussian", 0.2), 2), 1))
    assert man["lambda1"] == pytest.approx(lam, abs=1e-15) and lam > 0
    a1 = [float(r["a1_particle"]) for r in csv.DictReader(open(tmp_path / "a1.csv"))]
    assert a1[-1] > 5 * a1[0]


def test_missing_required_field(tmp_path, capsys):
    assert cli.run(["--run-dir", str(tmp_path), "chaos-sweep"]) == 2
    assert "chaos-sweep.model: required field missing" in capsys.readouterr().err


def test_validate_defaults_and_errors():
    r = cli.validate("kac", {})
    assert r["N"] == 100 and r["seed"] == 0
    with pytest.raises(cli.ConfigError) as e:
        cli.validate("speciation", {"sigma-x": 0}, source="cfg.yaml")
    assert e.value.errors == ["cfg.yaml: speciation.sigma-x: width must be positive"]
    with pytest.raises(cli.ConfigError) as e:
        cli.validate("boltzmann3", {"gamma-family": "capped_linear", "gamma-params": [1.0, 5.0], "gamma-max": 2.0})
    assert "kernel contract" in e.value.errors[0]
    with pytest.raises(cli.ConfigError) as e:
        cli.validate("kac", {"N": 1, "bogus": 3, "T": "x"})
    assert len(e.value.errors) == 3
    assert cli.validate("speciation", {"sigma": "inf"})["sigma"] == math.inf


def test_unknown_flag_and_subcommand_exit_2(tmp_path, capsys):
    assert cli.run(["kac", "--nonsense", "1"]) == 2
    assert cli.run(["teleport"]) == 2


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("t1-check:\n  N: 6\n  ell: 3\n  configs: 50\n  functions: 2\n")
    out = tmp_path / "run"
    assert cli.run(["--config", str(cfg), "--run-dir", str(out), "t1-check", "--ell", "2"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["ell"] == 2 and man["config"]["configs"] == 50
    bad = tmp_path / "bad.yaml"
    bad.write_text("N: 20\nell: 3\n")
    assert cli.run(["--config", str(bad), "--run-dir", str(out), "t1-check"]) == 2
    assert "N: need 2*ell <= N <= 8" in capsys.readouterr().err


def test_assertion_failure_exit_1(tmp_path, capsys):
    args = ["--run-dir", str(tmp_path), "chaos-sweep", "--model", "kac", "--ns", "6,12,24",
            "--replicas", "20", "--T", "0.5", "--expect-slope", "5,6"]
    assert cli.run(args) == 1
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"].startswith("assertion failed")
