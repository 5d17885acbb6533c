from __future__ import annotations

import csv
import json
import subprocess
import sys
from dataclasses import replace

import pytest

from dclc.cli import main
from dclc.scenario import save_scenario


@pytest.fixture(scope="module")
def short_file(tmp_path_factory, baseline):
    sc = replace(baseline, horizon_months=12, demand=replace(baseline.demand, horizon_months=12))
    path = tmp_path_factory.mktemp("scen") / "short.yaml"
    save_scenario(sc, path)
    return str(path)


@pytest.fixture(scope="module")
def tiny_facility_file(tmp_path_factory, baseline):
    sc = replace(baseline, design=replace(baseline.design, facility_capacity_watts=2_000_000))
    path = tmp_path_factory.mktemp("scen") / "tiny.yaml"
    save_scenario(sc, path)
    return str(path)


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def read_summary(directory):
    return json.loads((directory / "summary.json").read_text())


# --- simulate -----------------------------------------------------------------------------------

def test_simulate_reruns_are_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["simulate", "--scenario", "baseline", "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    assert set(files(tmp_path / "a")) == {"fleet_timeline.csv", "annual_tco.csv", "events.csv", "summary.json"}
    assert str(tmp_path / "a" / "summary.json") in capsys.readouterr().out


def test_global_flags_before_the_subcommand(tmp_path):
    assert main(["--seed", "4", "--format", "json", "--scenario", "baseline", "simulate",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "annual_tco.json").exists()
    assert read_summary(tmp_path)["metadata"]["seed"] == 4


def test_seed_from_environment(tmp_path, monkeypatch, short_file):
    monkeypatch.setenv("DCLC_SEED", "31")
    assert main(["simulate", "--scenario", short_file, "--out", str(tmp_path)]) == 0
    assert read_summary(tmp_path)["metadata"]["seed"] == 31
    monkeypatch.setenv("DCLC_SEED", "abc")
    assert main(["simulate", "--scenario", short_file, "--out", str(tmp_path / "x")]) == 1


def test_bundle_flags_reach_the_simulation(tmp_path):
    assert main(["simulate", "--power", "per-dc", "--life", "H100=0", "--ops", "quantization,model_routing",
                 "--out", str(tmp_path)]) == 0
    summary = read_summary(tmp_path)
    assert summary["bundle"].startswith("per-dc/air/ethernet")
    assert "H100=0" in summary["bundle"] and "quantization+model_routing" in summary["bundle"]
    with (tmp_path / "events.csv").open() as fh:
        assert not any(r[1] == "purchase" and r[2] == "H100" for r in csv.reader(fh))


def test_capacity_exhausted_exit_code(tmp_path, capsys, tiny_facility_file):
    assert main(["simulate", "--scenario", tiny_facility_file, "--out", str(tmp_path)]) == 3
    assert read_summary(tmp_path)["halted"] is True
    assert "capacity exhausted" in capsys.readouterr().err


# --- search commands ----------------------------------------------------------------------------

def test_refresh_sweep_spans_the_savings_band(tmp_path):
    assert main(["sweep", "--stage", "refresh", "--fixed", "--trials", "1", "--lifetimes", "0,36,84,120",
                 "--out", str(tmp_path)]) == 0
    summary = read_summary(tmp_path)
    assert 0.80 <= float(summary["ratio_min"]) <= 0.85
    assert float(summary["ratio_max"]) > 1.0
    with (tmp_path / "tco_distribution.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert {r["statistic"] for r in rows} >= {"mean_usd", "p5_usd", "p95_usd", "mean_ratio", "exhausted"}


def test_build_sweep_ranks_all_designs(tmp_path, short_file):
    assert main(["sweep", "--stage", "build", "--scenario", short_file, "--trials", "2",
                 "--out", str(tmp_path)]) == 0
    with (tmp_path / "ranking.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 36 and rows[0]["rank"] == "1"
    assert read_summary(tmp_path)["candidates"] == 36


def test_optimize_reports_stage_optima(tmp_path, short_file):
    assert main(["optimize", "--scenario", short_file, "--trials", "2", "--lifetimes", "0,60",
                 "--out", str(tmp_path)]) == 0
    summary = read_summary(tmp_path)
    assert set(summary["stage_best"]) == {"build", "refresh", "operate"}
    best = float(summary["best_ratio"])
    assert all(best <= float(v["ratio"]) for v in summary["stage_best"].values())


def test_matrix_emits_nine_cells(tmp_path, short_file):
    assert main(["matrix", "--scenario", short_file, "--space", "operate", "--trials", "1",
                 "--out", str(tmp_path)]) == 0
    with (tmp_path / "regime_matrix.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len({(r["model_regime"], r["hardware_regime"]) for r in rows}) == 9
    assert {r["stage"] for r in rows} == {"build", "refresh", "operate", "ratio", "exhausted"}


# --- validation and usage -----------------------------------------------------------------------

def test_validate_ok(capsys):
    assert main(["validate", "--scenario", "baseline"]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_malformed_writes_nothing(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\nstart_month: 2015-01\nhorizon_months: [\n")
    out = tmp_path / "out"
    assert main(["validate", "--scenario", str(bad), "--out", str(out)]) == 2
    assert main(["simulate", "--scenario", str(bad), "--out", str(out)]) == 2
    assert not out.exists()
    assert "invalid scenario" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["explode"], [], ["simulate", "--trials", "0"], ["simulate", "--life", "H100"],
                                  ["simulate", "--life", "Z1=12"], ["simulate", "--ops", "turbo"],
                                  ["sweep"], ["simulate", "--format", "xml"], ["sweep", "--stage", "build",
                                                                               "--lifetimes", "a,b"]])
def test_usage_errors_exit_one(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path / "o")]) == 1
    assert capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dclc.cli", "validate"], capture_output=True, text=True)
    assert proc.returncode == 0 and "ok" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "dclc.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
