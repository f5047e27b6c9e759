from __future__ import annotations

import csv
import io
import json
import subprocess
import sys

import pytest

from thermorothe.cli import EXIT_CONFIG, EXIT_ESTIMATE, EXIT_OK, EXIT_STEP, main
from thermorothe.scenarios import scenario_dict


def run_cli(*argv):
    buf = io.StringIO()
    code = main(list(argv), stdout=buf)
    return code, buf.getvalue()


def test_scenarios_listing():
    code, text = run_cli("scenarios")
    assert code == EXIT_OK and "stefan-boltzmann" in text and "coupled-mild" in text


def test_stationary_run_with_ledger(tmp_path):
    code, text = run_cli("--scenario", "stationary", "--M", "8", "--mesh", "16", "--check-estimates",
                         "--strict", "--out", str(tmp_path))
    assert code == EXIT_OK, text
    with open(tmp_path / "ledger.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 9 and rows[-1]["step"] == "total"
    assert all(r["cumulative_pass"] == "True" and r["flux_pass"] == "True" for r in rows[:-1])
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    on_disk = {p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*")
               if p.is_file() and p.name != "run_manifest.json"}
    assert set(manifest["files"]) == on_disk
    assert "trajectory/manifest.json" in on_disk and "constants.csv" in on_disk


def test_constants_command(tmp_path):
    code, text = run_cli("constants", "--scenario", "newton-cooling", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert "P2:" in text and "theorem_holds" in text
    assert (tmp_path / "constants.txt").exists()


def test_convergence_study_csv(tmp_path):
    code, _ = run_cli("--scenario", "decoupled-heat", "--mesh", "16", "--M", "4", "--convergence-study", "4,8,16",
                      "--workers", "2", "--out", str(tmp_path))
    assert code == EXIT_OK
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert len(lines) == 3


def test_corrupted_constant_exits_with_estimate_code(tmp_path):
    raw = scenario_dict("coupled-mild")
    raw["verification"] = {"check_estimates": True, "corrupt_L1_factor": 10.0}
    raw["time"]["M"] = 8
    raw["mesh"] = 16
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    code, text = run_cli("--config", str(path), "--out", str(tmp_path / "out"))
    assert code == EXIT_ESTIMATE
    assert "VIOLATED" in text


def test_config_errors_map_to_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[")
    assert run_cli("--config", str(bad))[0] == EXIT_CONFIG
    assert run_cli("--scenario", "no-such-thing")[0] == EXIT_CONFIG
    assert run_cli()[0] == EXIT_CONFIG
    assert run_cli("--scenario", "stationary", "--convergence-study", "8,12")[0] == EXIT_CONFIG


def test_step_too_large_exit_code(tmp_path):
    raw = scenario_dict("newton-cooling")
    raw["coefficients"]["b"] = 50.0
    raw["scheme"] = "B"
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    assert run_cli("--config", str(path), "--out", str(tmp_path / "o"))[0] == EXIT_STEP


def test_reruns_are_reproducible(tmp_path):
    for d in ("a", "b"):
        assert run_cli("--scenario", "coupled-mild", "--M", "4", "--mesh", "8", "--check-estimates",
                       "--out", str(tmp_path / d))[0] == EXIT_OK
    ma = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "run_manifest.json").read_text())
    assert ma["files"] == mb["files"] and ma["config_sha256"] == mb["config_sha256"]


@pytest.mark.parametrize("args", [["-m", "thermorothe", "scenarios"]])
def test_module_entry_point(args):
    proc = subprocess.run([sys.executable, *args], capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0 and "stationary" in proc.stdout
