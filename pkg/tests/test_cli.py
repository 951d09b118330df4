import csv
import json

import numpy as np
import pytest

from odewave import cli, verify


def write(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(*argv):
    return cli.main(list(argv), quiet=True)


WORKED = {"plant": verify.WORKED, "gains": {"poles_K": [-1.0], "poles_H": [-2.0]}}


def test_design_worked(tmp_path):
    out = tmp_path / "out"
    assert run("design", "--config", write(tmp_path, WORKED), "--out", str(out)) == 0
    doc = json.loads((out / "design.json").read_text())
    assert doc["assumptions"]["ok"]
    np.testing.assert_allclose(doc["gains"]["K"], [-1.0], atol=1e-14)


def test_design_planted_root(tmp_path):
    out = tmp_path / "out"
    code = run("design", "--config", write(tmp_path, {"plant": verify.planted_config()}), "--out", str(out))
    assert code == 3
    doc = json.loads((out / "design.json").read_text())
    assert "-0.30251" in doc["error"]


def test_invalid_config_writes_nothing(tmp_path):
    out = tmp_path / "out"
    bad = {"plant": dict(verify.WORKED, alpha=-1.0)}
    assert run("design", "--config", write(tmp_path, bad), "--out", str(out)) == 2
    assert not out.exists()


def test_malformed_json(tmp_path, caplog):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "plant": {"A": [[0]],\n  "B1": [1]\n')
    assert cli.main(["design", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "bad.json:4:" in caplog.text


@pytest.mark.parametrize("cfg", [
    dict(WORKED, scenario="state_feedback", disturbance={"d_kind": "sinusoid"}),
    dict(WORKED, scenario="bogus"),
    dict(WORKED, grid=15),
    dict(WORKED, extra=1),
    dict(WORKED, gains={"poles": [-1]}),
])
def test_validation_errors(tmp_path, cfg):
    assert run("simulate", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")) == 2


def test_cfl_violation_is_a_configuration_error(tmp_path):
    out = tmp_path / "o"
    assert run("simulate", "--config", write(tmp_path, WORKED), "--out", str(out), "--dt-factor", "1.5") == 2
    assert not out.exists()


def test_zero_run_is_zero(tmp_path):
    cfg = dict(WORKED, ic={}, grid=20, horizon=1.0)
    out = tmp_path / "o"
    assert run("simulate", "--config", write(tmp_path, cfg), "--out", str(out)) == 0
    data = np.genfromtxt(out / "trace.csv", delimiter=",", names=True)
    for name in data.dtype.names:
        if name != "t":
            assert not np.any(data[name]), name


def test_determinism(tmp_path):
    cfg = dict(WORKED, ic={"X": [1.0], "w": {"kind": "random"}, "w_t": {"kind": "random"}},
               grid=40, horizon=2.0, seed=7, disturbance={"d_kind": "sinusoid"})
    path = write(tmp_path, cfg)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", "--config", path, "--out", str(a)) == 0
    assert run("simulate", "--config", path, "--out", str(b)) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    c = tmp_path / "c"
    assert run("simulate", "--config", path, "--out", str(c), "--seed", "8") == 0
    assert (a / "trace.csv").read_bytes() != (c / "trace.csv").read_bytes()


def test_demo_config_report(tmp_path):
    out = tmp_path / "o"
    assert run("simulate", "--config", write(tmp_path, cli.DEMO_CONFIG), "--out", str(out)) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["fits"]["plant"]["gamma"] > 0
    assert rep["fits"]["observer"]["gamma"] > 0
    assert rep["tracking"]["ratio"] <= 0.05
    assert rep["bounded"] == {"p": True, "z": True}


@pytest.mark.parametrize("scenario", ["state_feedback", "error_systems"])
def test_other_scenarios(tmp_path, scenario):
    cfg = dict(WORKED, scenario=scenario, grid=40, horizon=4.0)
    if scenario == "error_systems":
        cfg["disturbance"] = {"d_kind": "sinusoid"}
    out = tmp_path / "o"
    assert run("simulate", "--config", write(tmp_path, cfg), "--out", str(out)) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["scenario"] == scenario
    key = "plant" if scenario == "state_feedback" else "error"
    assert rep["fits"][key]["gamma"] > 0


def test_blow_up_flushes_trace(tmp_path):
    cfg = dict(WORKED, grid=20, horizon=5.0, record_every=1, disturbance={"d_kind": "step", "d_amp": 1e13})
    out = tmp_path / "o"
    assert run("simulate", "--config", write(tmp_path, cfg), "--out", str(out)) == 4
    assert (out / "trace.csv").exists()
    assert not (out / "report.json").exists()


def test_kernels_export(tmp_path):
    out = tmp_path / "o"
    assert run("kernels", "--config", write(tmp_path, WORKED), "--out", str(out), "--grid", "20") == 0
    data = np.loadtxt(out / "kernels.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 2], 2 - data[:, 0], atol=1e-14)
    doc = json.loads((out / "kernels.json").read_text())
    assert max(doc["residual_fd"].values()) < 1e-8


def _summary(out):
    with open(out / "summary.csv") as fh:
        return list(csv.DictReader(fh))


def test_sweep_k_est(tmp_path):
    cfg = dict(cli.DEMO_CONFIG, sweep={"k_est": [0.5, 1.0, 2.0]})
    out = tmp_path / "o"
    assert run("sweep", "--config", write(tmp_path, cfg), "--out", str(out), "--jobs", "3") == 0
    rows = _summary(out)
    assert [float(r["k_est"]) for r in rows] == [0.5, 1.0, 2.0]
    for r in rows:
        assert r["status"] == "ok"
        assert float(r["tracking_ratio"]) <= 0.1


def test_sweep_flags_infeasible_rows(tmp_path):
    cfg = dict(WORKED, grid=20, horizon=1.0, sweep={"poles_K": [[-1.0], [1.0]]})
    out = tmp_path / "o"
    assert run("sweep", "--config", write(tmp_path, cfg), "--out", str(out)) == 0
    rows = _summary(out)
    assert [r["status"] for r in rows] == ["ok", "infeasible"]
    assert rows[1]["exit_code"] == "3"


def test_one_point_sweep_matches_simulate(tmp_path):
    base = dict(WORKED, grid=20, horizon=1.0)
    sim, sw = tmp_path / "sim", tmp_path / "sw"
    assert run("simulate", "--config", write(tmp_path, base, "a.json"), "--out", str(sim)) == 0
    assert run("sweep", "--config", write(tmp_path, dict(base, sweep={"alpha": [1.0]}), "b.json"),
               "--out", str(sw)) == 0
    assert (sim / "trace.csv").read_bytes() == (sw / "run_000" / "trace.csv").read_bytes()


def test_verify_subset(tmp_path, capsys):
    assert cli.main(["verify", "--only", "2,11", "--out", str(tmp_path)], quiet=False) == 0
    text = capsys.readouterr().out
    assert "[PASS]  2" in text and "[PASS] 11" in text
    assert len(json.loads((tmp_path / "verify.json").read_text())) == 2
