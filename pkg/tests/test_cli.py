import csv
import json
import subprocess
import sys

import pytest

from masc.cli import main


@pytest.fixture
def sim(tmp_path):
    (tmp_path / "sim.toml").write_text(
        '[simulate]\nn_donors = 8\nn_post = 3\nnu_sd = 0.1\neps_sd = 0.1\nn_pre = 12\n[run]\noutput = "sim"\n'
    )
    assert main(["simulate", "-c", str(tmp_path / "sim.toml")]) == 0
    (tmp_path / "run.toml").write_text(
        '[data]\npath = "sim/panel.csv"\n[design]\ntreated = ["T1"]\nintervention = 13\n'
        '[inference]\nn_iter = 20\n[run]\noutput = "out"\n'
    )
    return tmp_path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_outputs(sim):
    assert (sim / "sim" / "panel.csv").read_text().startswith("unit,period,outcome,mediator,x1\n")
    truth = _rows(sim / "sim" / "ground_truth.csv")
    assert len(truth) == 3
    assert float(truth[0]["alpha"]) == pytest.approx(2.0)
    design = json.loads((sim / "sim" / "design.json").read_text())
    assert design["intervention"] == 13 and design["treated"] == ["T1"]


def test_estimate_artifacts_and_rerun(sim):
    cfg = str(sim / "run.toml")
    assert main(["validate", "-c", cfg]) == 0
    assert main(["estimate", "-c", cfg]) == 0
    out = sim / "out"
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert set(first) == {"effects.csv", "weights.json", "fit.json", "series.csv"}
    rows = _rows(out / "effects.csv")
    assert [r["period"] for r in rows] == ["13", "14", "15"]
    for r in rows:
        t, d, i = (float(r[k]) for k in ("total", "direct", "indirect"))
        assert abs(t - (d + i)) <= 1e-5 * max(1.0, abs(t))
    weights = json.loads(first["weights.json"])
    assert set(weights["T1"]) == {"Y00", "Y01", "M0"}
    assert set(weights["T1"]["Y01"]) == {"13", "14", "15"}
    assert sum(weights["T1"]["Y00"]["all"].values()) == pytest.approx(1.0)
    series = _rows(out / "series.csv")
    assert len(series) == 15 and "synthetic_y01" in series[0]
    assert main(["estimate", "-c", cfg]) == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first


def test_placebo_pvalues_on_grid(sim):
    assert main(["placebo", "-c", str(sim / "run.toml")]) == 0
    rows = _rows(sim / "out" / "effects.csv")
    grid = {f"{k / 8:.6g}" for k in range(9)}
    for r in rows:
        for e in ("p_total", "p_direct", "p_indirect"):
            assert r[e] in grid
    stats = _rows(sim / "out" / "placebo_stats.csv")
    assert {s["role"] for s in stats} == {"treated", "placebo"}
    assert len(stats) == 9 * 3


def test_resample_is_reproducible(sim):
    cfg = str(sim / "run.toml")
    assert main(["resample", "-c", cfg, "--seed", "5"]) == 0
    a = (sim / "out" / "resample_draws.csv").read_bytes()
    assert main(["resample", "-c", cfg, "--seed", "5"]) == 0
    assert (sim / "out" / "resample_draws.csv").read_bytes() == a
    assert len(a.decode().splitlines()) == 1 + 20 * 3 * 3


def test_loo_outputs(sim):
    assert main(["loo", "-c", str(sim / "run.toml"), "--exclude", "D8"]) == 0
    files = sorted(p.name for p in (sim / "out" / "loo").iterdir())
    assert files == [f"effects_T1_without_D{i}.csv" for i in range(1, 8)]
    summary = _rows(sim / "out" / "loo_summary.csv")
    assert {r["status"] for r in summary} == {"ok", "max"}


def test_flags_override_config(sim):
    cfg = str(sim / "run.toml")
    assert main(["estimate", "-c", cfg, "--mediator-mode", "single-lag(1)", "-o", str(sim / "lag")]) == 0
    assert [r["period"] for r in _rows(sim / "lag" / "effects.csv")] == ["14", "15"]


def test_exit_codes(sim, capsys):
    cfg = str(sim / "run.toml")
    assert main(["estimate", "-c", cfg, "--treated", "ZZ"]) == 2
    assert "UnknownUnit" in capsys.readouterr().err
    assert main(["estimate", "-c", cfg, "--intervention", "99"]) == 2
    assert main(["estimate", "--data", str(sim / "sim" / "panel.csv")]) == 2
    assert main(["estimate", "-c", str(sim / "missing.toml")]) == 2
    (sim / "tight.toml").write_text((sim / "run.toml").read_text() + "[estimation]\ntolerance = 0.0\n")
    assert main(["estimate", "-c", str(sim / "tight.toml")]) == 0
    assert main(["estimate", "-c", str(sim / "tight.toml"), "--strict"]) == 3
    assert "NonConvergenceWarning" in capsys.readouterr().err


def test_mc_command(tmp_path):
    (tmp_path / "mc.toml").write_text("[simulate]\nn_donors = 5\nn_post = 2\nnu_sd = 0.1\n[mc]\ngrid = [6, 8]\nreps = 3\n")
    assert main(["mc", "-c", str(tmp_path / "mc.toml"), "-o", str(tmp_path / "mc")]) == 0
    rows = _rows(tmp_path / "mc" / "mc_bias.csv")
    assert len(rows) == 6 and rows[0]["reps"] == "3"
    assert main(["mc", "-c", str(tmp_path / "mc.toml"), "--grid", "8,6"]) == 2


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "masc", "--help"], capture_output=True, text=True)
    assert done.returncode == 0 and "simulate" in done.stdout


def test_perfect_hull_through_cli(tmp_path):
    (tmp_path / "sim.toml").write_text('[simulate]\nn_pre = 20\n[run]\noutput = "sim"\n')
    assert main(["simulate", "-c", str(tmp_path / "sim.toml")]) == 0
    args = ["--data", str(tmp_path / "sim" / "panel.csv"), "--treated", "T1", "--intervention", "21"]
    assert main(["estimate", *args, "-o", str(tmp_path / "out")]) == 0
    for r in _rows(tmp_path / "out" / "effects.csv"):
        assert abs(float(r["total"]) - 2.0) <= 1e-6
        assert abs(float(r["direct"]) - 1.2) <= 1e-6
        assert abs(float(r["indirect"]) - 0.8) <= 1e-6
