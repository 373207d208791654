import csv
import json
import subprocess
import sys

import pytest

from phononflux import ExperimentConfig, build_elastic_lattice, run_experiment
from phononflux.cli import SUBCOMMANDS, main
from phononflux.errors import ConfigError


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _cfg(tmp_path, **extra):
    cfg = {"model": {"type": "elastic", "d": 1, "m": 1.0}, "grid": {"N": 64},
           "output": {"dir": str(tmp_path / "out")}, "observables": []}
    cfg.update(extra)
    return cfg


# ---------------------------------------------------------------- configuration

def test_config_errors_carry_json_pointer(tmp_path):
    bad = _cfg(tmp_path, grid={"N": 63})
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(bad)
    assert exc.value.pointer == "/grid/N"
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(_cfg(tmp_path, ensemble={"M": 0}))
    assert exc.value.pointer == "/ensemble/M"
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(_cfg(tmp_path, observables=["bogus"]))
    assert exc.value.pointer.startswith("/observables")


def test_config_digest_is_stable(tmp_path):
    a = ExperimentConfig.from_dict(_cfg(tmp_path))
    b = ExperimentConfig.from_dict(json.loads(json.dumps(_cfg(tmp_path))))
    assert a.digest == b.digest


# ---------------------------------------------------------------- run_experiment

def test_empty_observables_write_manifest_only(tmp_path):
    res = run_experiment(_cfg(tmp_path))
    assert res.exit_code == 0
    out = tmp_path / "out"
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json"]
    man = json.loads((out / "manifest.json").read_text())
    for key in ("config_sha256", "versions", "seeds", "timestamp"):
        assert key in man


def test_dispersion_task_rows(tmp_path):
    res = run_experiment(_cfg(tmp_path, observables=["dispersion"]))
    assert res.exit_code == 0
    rows = _read_csv(tmp_path / "out" / "dispersion.csv")
    assert len(rows) == 65


def test_model_file_round_trip(tmp_path):
    V = build_elastic_lattice(2, 0.5)
    res = run_experiment(_cfg(tmp_path, model=V.to_json(), grid={"N": 8}, observables=["dispersion", "check"]))
    assert res.exit_code == 0
    assert len(_read_csv(tmp_path / "out" / "dispersion.csv")) == 65


def test_second_law_pipeline(tmp_path):
    cfg = _cfg(tmp_path, grid={"N": 1024}, ensemble={"M": 2000, "master_seed": 1},
               temperatures={"T_plus": 2.0, "T_minus": 1.0}, times=[40.0], observables=["second_law"])
    res = run_experiment(cfg)
    assert res.exit_code == 0, (res.errors, res.failures)
    rows = _read_csv(tmp_path / "out" / "current.csv")
    verdicts = [r for r in rows if "PASS" in r or "FAIL" in r]
    assert verdicts and all("PASS" in r for r in verdicts)
    seam = [r for r in rows if r[0] == "mc" and r[2] == "40" and r[3] == "0"]
    assert len(seam) == 1 and float(seam[0][4]) < 0


def test_numeric_failure_is_reported(tmp_path):
    # Gibbs density on a massless chain: E6 fails, the task errors but the bundle is written
    cfg = _cfg(tmp_path, model={"type": "elastic", "d": 1, "m": 0.0}, temperatures={"T_plus": 2.0, "T_minus": 1.0},
               observables=["dispersion", "limit_covariance"])
    res = run_experiment(cfg)
    assert res.exit_code == 3
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["tasks"]["dispersion"] == "ok" and man["tasks"]["limit_covariance"] == "error"


def test_horizon_violation_is_flagged(tmp_path):
    cfg = _cfg(tmp_path, density={"type": "triangular", "N0": 2}, times=[0.0, 500.0], observables=["evolve"])
    res = run_experiment(cfg)
    assert res.exit_code == 0
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["horizon_warnings"][0]["times"] == [500.0]


# ---------------------------------------------------------------- command line

def _bodies(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.suffix == ".csv"}


@pytest.mark.parametrize("cmd", sorted(SUBCOMMANDS))
def test_every_subcommand_runs(cmd, tmp_path):
    args = [cmd, "--out", str(tmp_path / cmd), "--trials", "50", "--seed", "3"]
    if cmd == "decay":
        args += ["--grid", "1024", "--times", "50", "100", "200", "400"]
    assert main(args) == 0
    assert (tmp_path / cmd / "manifest.json").exists()


def test_cli_determinism_and_threads(tmp_path):
    base = ["current", "--trials", "64", "--seed", "9", "--times", "10"]
    main(base + ["--out", str(tmp_path / "a"), "--threads", "1"])
    main(base + ["--out", str(tmp_path / "b"), "--threads", "1"])
    main(base + ["--out", str(tmp_path / "c"), "--threads", "4"])
    a, b, c = (_bodies(tmp_path / k) for k in "abc")
    assert a and a == b == c


def test_cli_config_error_exit_code(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(_cfg(tmp_path, grid={"N": 7})))
    assert main(["run", str(cfg)]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2


def test_cli_assert_mode(tmp_path):
    # a far too short decay window misses the asymptotic slope
    args = ["decay", "--grid", "1024", "--times", "1", "2", "--out", str(tmp_path / "d")]
    assert main(args) == 0
    assert main(args + ["--assert"]) == 4


def test_run_subcommand_and_module_entry(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps(_cfg(tmp_path, observables=["dispersion", "check"])))
    proc = subprocess.run([sys.executable, "-m", "phononflux", "run", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "out" / "conditions.csv").exists()
