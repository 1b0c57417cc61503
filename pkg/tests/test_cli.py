import csv
import json

import numpy as np
import pytest

from logitlanes.cli import THREADS_ENV, main, parse_duration
from logitlanes.compare import SchemeConfig, compare, relative_l1
from logitlanes.equilibrium import solve_batch
from logitlanes.model import GridState
from logitlanes.scenario import ScenarioError, riemann_scenario

SMALL = ["--cells", "40", "--duration", "0.2min"]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_duration():
    assert parse_duration("2min") == pytest.approx(2 / 60)
    assert parse_duration("120s") == pytest.approx(2 / 60)
    assert parse_duration("0.5") == 0.5
    assert parse_duration("1h") == 1.0


def test_simulate_riemann_remap_snapshots(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "riemann.json", "--scheme", "remap", "--out", str(out)]) == 0
    rows = read_rows(out / "snapshots.csv")
    times = sorted({float(r["t"]) for r in rows})
    assert times == [0.0, pytest.approx(2 / 60)]
    assert len(rows) == 2 * 400
    assert sorted(p.name for p in out.glob("*.svg")) == ["snapshot_000.svg", "snapshot_001.svg"]
    assert (out / "snapshot_001.svg").read_text().lstrip().startswith("<?xml")
    mass = read_rows(out / "mass.csv")
    assert {r["class"] for r in mass} == {"1", "2"}


def test_snapshots_satisfy_the_invariants(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "riemann.json", "--scheme", "rusanov", *SMALL, "--out", str(out), "--no-plots"]) == 0
    rows = read_rows(out / "snapshots.csv")
    spec = riemann_scenario().network
    rho = np.array([[float(r["rho_1"]), float(r["rho_2"])] for r in rows])
    lanes = np.array([[float(r["rho_lane_1"]), float(r["rho_lane_2"])] for r in rows])
    assert np.all(rho >= -1e-9)
    np.testing.assert_allclose(lanes.sum(axis=1), rho.sum(axis=1), rtol=1e-12, atol=1e-10)
    again = solve_batch(spec, np.maximum(rho, 0))
    assert again.converged.all()
    np.testing.assert_allclose(again.lane_density, lanes, rtol=1e-12, atol=1e-10)


@pytest.mark.parametrize("scheme", ["lax_friedrichs", "lagrange"])
def test_simulate_is_deterministic(tmp_path, scheme):
    outs = []
    for n in range(2):
        out = tmp_path / f"run{n}"
        assert main(["simulate", "riemann.json", "--scheme", scheme, *SMALL, "--out", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    if scheme == "lagrange":
        assert "groups.csv" in names
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_zero_duration_gives_initial_snapshot_only(tmp_path):
    out = tmp_path / "z"
    assert main(["simulate", "riemann.json", "--duration", "0", "--cells", "30", "--out", str(out)]) == 0
    assert {r["t"] for r in read_rows(out / "snapshots.csv")} == {"0.0"}
    assert [p.name for p in out.glob("*.svg")] == ["snapshot_000.svg"]


def test_user_errors_exit_with_status_2(tmp_path, capsys):
    assert main(["simulate", "riemann.json", "--scheme", "godunov", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "valid schemes: lax_friedrichs, rusanov, remap, lagrange" in err
    assert main(["simulate", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert main(["simulate", "riemann.json", "--cfl", "2", *SMALL, "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "riemann.json", "--cells", "two"])
    assert exc.value.code == 2


def test_thread_cap_variable(tmp_path, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "zero")
    assert main(["equilibrium", "riemann.json", "--rho", "1=10"]) == 2
    monkeypatch.setenv(THREADS_ENV, "1")
    assert main(["equilibrium", "riemann.json", "--rho", "1=10"]) == 0


def test_equilibrium_prints_json_and_table(capsys):
    assert main(["equilibrium", "riemann.json", "--rho", "1=10", "--rho", "2=90"]) == 0
    text = capsys.readouterr().out
    block, table = text.split("\n\n", 1)
    data = json.loads(block)
    assert data["partial"]["2"]["1"] == pytest.approx(41.787669017674716, rel=1e-10)
    assert data["converged"] is True
    assert "class 2" in table and "lane 1" in table and "residual" in table
    assert main(["equilibrium", "riemann.json", "--rho", "3=10"]) == 2
    assert main(["equilibrium", "riemann.json", "--rho", "1=-4"]) == 2
    capsys.readouterr()
    assert main(["equilibrium", "riemann.json", "--rho", "2=90", "--format", "json", "--nu", "1e9"]) == 0
    split = json.loads(capsys.readouterr().out)["partial"]["2"]
    assert split["1"] == pytest.approx(45.0, abs=1e-5) and split["2"] == pytest.approx(45.0, abs=1e-5)


def test_estimate_on_shipped_dataset(tmp_path):
    out = tmp_path / "est"
    assert main(["estimate", "synthetic_nu30.csv", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    step = 2500 ** (1 / 59) / 17 ** (1 / 59)
    for est in report["SYN30"]["bands"].values():
        assert 30 / step <= est["nu"] <= 30 * step
    curve = read_rows(out / "sse_curve.csv")
    assert len(curve) == 240 and set(curve[0]) == {"station", "band", "nu", "sse"}


def test_estimate_errors(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["estimate", str(empty), "--out", str(tmp_path)]) == 2
    single = tmp_path / "single.csv"
    single.write_text("station,timestamp,lane,density,speed\nS,0,1,5,80\nS,1,1,6,82\n")
    assert main(["estimate", str(single), "--out", str(tmp_path)]) == 2
    assert "insufficient lanes" in capsys.readouterr().err


def test_compare_cli(tmp_path):
    out = tmp_path / "cmp"
    args = ["compare", "riemann.json", "remap:60", "remap:60", "lagrange:5", "--duration", "0.2min", "--out", str(out)]
    assert main(args) == 0
    report = json.loads((out / "comparison.json").read_text())
    first = report["distances"][0]
    assert first["a"] == "remap:60" and first["b"] == "remap:60#1"
    assert all(v == 0.0 for snap in first["snapshots"] for v in snap["relative_l1"].values())
    assert "wall_clock_s" not in report and (out / "timing.json").exists()
    assert report["flux_evaluations"]["lagrange:5"] > 0
    rows = read_rows(out / "comparison.csv")
    assert {r["scheme_b"] for r in rows} == {"remap:60#1", "lagrange:5"}
    assert main(["compare", "riemann.json", "remap", "--out", str(out)]) == 2


def test_scheme_config_parse():
    assert SchemeConfig.parse("rusanov:800:0.5") == SchemeConfig("rusanov", 800.0, 0.5)
    assert SchemeConfig.parse("LF").label == "lax_friedrichs"
    with pytest.raises(ScenarioError):
        SchemeConfig.parse("remap:many")
    with pytest.raises(ScenarioError):
        SchemeConfig.parse("remap:1:2:3")


def test_relative_l1_properties():
    a = GridState(1.0, np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]))
    b = GridState(1.0, np.array([[1.0, 0.0], [2.0, 0.0], [6.0, 0.0]]))
    assert relative_l1(a, a).tolist() == [0.0, 0.0]
    assert relative_l1(a, b)[0] == pytest.approx(3 / 9)
    fine = GridState(1.0, np.repeat(a.rho, 2, axis=0))
    np.testing.assert_allclose(relative_l1(fine, a), [0.0, 0.0], atol=1e-15)


def test_compare_needs_two_configs():
    with pytest.raises(ScenarioError):
        compare(riemann_scenario(), [SchemeConfig("remap")])
