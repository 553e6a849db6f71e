from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from radialflow.cli import (
    CONFIG_ERROR,
    SCENARIOS,
    SERIES_COLUMNS,
    ConfigError,
    main,
    parse_config,
    read_sections,
)
from radialflow.radial import RadialGrid, RadialProfile, rescale_profile, write_profile_csv


def write_config(path, body: str):
    path.write_text(body)
    return path


SMALL_SUB = """
[experiment]
scenario = subcritical_radial

[grid]
n_cells = 64

[run]
horizon = 1.5
snapshots = 16
"""


def test_run_writes_artifacts(tmp_path):
    cfg = write_config(tmp_path / "sub.ini", SMALL_SUB)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--output", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["status_code"] == 0
    assert set(summary["ledger"]) >= {"mass_drift", "positivity_clips", "ordering_violations"}
    assert summary["ledger"]["relative_mass_drift"] < 1e-12
    assert summary["fit"]["mode"] == "exponential"
    rows = list(csv.reader((out / "series.csv").open()))
    assert tuple(rows[0]) == SERIES_COLUMNS
    assert len(rows) == 17
    # numbers carry full precision
    assert len(rows[-1][1].replace(".", "").lstrip("0")) >= 15
    assert (out / "snapshot_0.csv").exists() and (out / "snapshot_15.csv").exists()


def test_run_is_deterministic(tmp_path):
    cfg = write_config(tmp_path / "sub.ini", SMALL_SUB)
    main(["run", str(cfg), "--output", str(tmp_path / "a")])
    main(["run", str(cfg), "--output", str(tmp_path / "b")])
    for name in ("series.csv", "summary.json", "snapshot_15.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_horizon_zero_gives_one_snapshot(tmp_path):
    cfg = write_config(tmp_path / "z.ini", SMALL_SUB.replace("horizon = 1.5", "horizon = 0"))
    out = tmp_path / "empty"
    assert main(["run", str(cfg), "--output", str(out)]) == 0
    rows = list(csv.reader((out / "series.csv").open()))
    assert len(rows) == 2
    assert json.loads((out / "summary.json").read_text())["status_code"] == 0


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RADIALFLOW_OUTPUT", str(tmp_path / "root"))
    cfg = write_config(tmp_path / "named.ini", SMALL_SUB.replace("horizon = 1.5", "horizon = 0"))
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "root" / "named" / "summary.json").exists()


def test_supercritical_run_reports_blow_up(tmp_path):
    cfg = write_config(tmp_path / "sup.ini", "[experiment]\nscenario = supercritical_blowup\n[grid]\nn_cells = 128\n")
    out = tmp_path / "sup"
    code = main(["run", str(cfg), "--output", str(out)])
    summary = json.loads((out / "summary.json").read_text())
    assert code == 3 and summary["status"] == "blowup_suspected"
    assert summary["ledger"]["max_m2_decrease_rate"] > 0


def test_aggregation_scenario(tmp_path):
    cfg = write_config(tmp_path / "agg.ini", "[experiment]\nscenario = aggregation_steady\n[grid]\nn_cells = 64\n")
    out = tmp_path / "agg"
    assert main(["run", str(cfg), "--output", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["final_w2"] < 1e-3
    assert summary["setup"]["rate_constant"] == pytest.approx(1.0, rel=1e-8)


def test_config_errors_name_the_field(tmp_path, capsys):
    cases = {
        "[experiment]\nscenario = nope\n": "[experiment] scenario",
        "[experiment]\nscenario = subcritical_radial\n[model]\nmass_ratio = 1.5\n": "[model] mass",
        "[experiment]\nscenario = subcritical_radial\n[grid]\nn_cells = many\n": "[grid] n_cells",
        "[experiment]\nscenario = subcritical_radial\n[grid]\ncolour = red\n": "[grid] colour",
        "[experiment]\nscenario = aggregation_steady\n[model]\nq = 7\n": "[model] q",
        "[experiment]\nscenario = subcritical_radial\n[initial]\nkind = annulus\n": "[initial] r1, r2",
        "[experiment]\nscenario = subcritical_radial\n[control]\nreconstruction = weno\n": "[control]",
    }
    for i, (body, field) in enumerate(cases.items()):
        cfg = write_config(tmp_path / f"bad{i}.ini", body)
        assert main(["run", str(cfg), "--output", str(tmp_path / f"o{i}")]) == CONFIG_ERROR
        assert field in capsys.readouterr().err


def test_explicit_mass_replaces_scenario_ratio():
    cfg = parse_config({"experiment": {"scenario": "subcritical_radial"}, "model": {"mass": "12.5"}})
    assert cfg.mass == 12.5 and cfg.mass_ratio is None


def test_every_scenario_parses():
    for name in SCENARIOS:
        cfg = parse_config({"experiment": {"scenario": name}}, name)
        assert cfg.scenario == name


def test_sweep_needs_two_values(tmp_path, capsys):
    cfg = write_config(tmp_path / "s.ini", SMALL_SUB)
    assert main(["sweep", str(cfg), "--axis", "mass", "--values", "0.5"]) == CONFIG_ERROR
    assert "at least two" in capsys.readouterr().err


def test_sweep_n_cells(tmp_path):
    body = "[experiment]\nscenario = subcritical_radial\n[run]\nhorizon = 0.2\nsnapshots = 3\n[control]\nreconstruction = upwind\n"
    cfg = write_config(tmp_path / "s.ini", body)
    out = tmp_path / "sw"
    assert main(["sweep", str(cfg), "--axis", "n_cells", "--values", "32,64", "--output", str(out), "--workers", "2"]) == 0
    report = json.loads((out / "sweep.json").read_text())
    assert report["combined_fit"]["mass_form_residual"]["slope"] > 0.5
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert [r["value"] for r in rows] == ["32.0", "64.0"]
    assert (out / "n_cells_32" / "summary.json").exists()


def test_sweep_mass_slope(tmp_path):
    cfg = write_config(tmp_path / "m.ini", "[experiment]\nscenario = mass_scaling\n[grid]\nn_cells = 64\n[run]\nhorizon = 1\nsnapshots = 2\n")
    out = tmp_path / "ms"
    assert main(["sweep", str(cfg), "--axis", "mass", "--values", "0.001,0.01", "--output", str(out), "--workers", "1"]) == 0
    fit = json.loads((out / "sweep.json").read_text())["combined_fit"]
    assert 0.5 < fit["slope"] < 0.8


def test_stationary_command(tmp_path, capsys):
    out = tmp_path / "st"
    assert main(["stationary", "--preset", "aggregation", "--d", "3", "--q", "2", "--n-cells", "64", "--output", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["support_radius"] == pytest.approx((4 * np.pi) ** (-1 / 3), rel=1e-8)
    assert set(json.loads((out / "summary.json").read_text())) == {
        "support_radius", "total_mass", "central_density", "residual",
    }
    assert (out / "profile.csv").exists()
    assert main(["stationary", "--preset", "porous_medium", "--d", "3", "--output", str(out)]) == CONFIG_ERROR
    assert main(["stationary", "--preset", "aggregation", "--d", "3", "--output", str(out)]) == CONFIG_ERROR


def test_compare_command(tmp_path, capsys):
    g = RadialGrid(3, 2.0, 32)
    p = RadialProfile.from_function(g, lambda r: np.maximum(1 - r**2, 0))
    write_profile_csv(rescale_profile(p, 1.5), tmp_path / "wide.csv")
    write_profile_csv(p, tmp_path / "narrow.csv")
    assert main(["compare", str(tmp_path / "wide.csv"), str(tmp_path / "narrow.csv")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ordered"] is True and report["worst_violation"] <= 0


def test_rates_command(tmp_path, capsys):
    path = tmp_path / "series.csv"
    t = np.linspace(0, 4, 21)
    with path.open("w") as fh:
        fh.write("t,w2_to_target\n")
        for ti in t:
            fh.write(f"{float(ti)!r},{float(np.exp(-0.7 * ti))!r}\n")
    assert main(["rates", str(path), "--mode", "exp"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["exponent"] == pytest.approx(-0.7, abs=1e-10)
    assert set(out) >= {"mode", "exponent", "prefactor", "r2", "window"}


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "radialflow", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "stationary" in res.stdout


def test_read_sections_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        read_sections(tmp_path / "missing.ini")
