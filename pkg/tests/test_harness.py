import json
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypodiff.errors import MalformedHeader, MCFailure, NonEquispaced, NonNumericCell, StageError
from hypodiff.harness import MCConfig, load_config, load_mc_result, read_path_csv, run_mc, write_path_csv
from hypodiff.harness import mc as mc_module
from hypodiff.harness.cli import cli_main
from hypodiff.model import ThetaBlocks
from hypodiff.simulate import SamplePath

CONFIG = """\
[model]
name = "linear"
theta1 = [1.0]
theta2 = [1.0, 1.0]
theta3 = [1.0]

[design]
n = 150
h = 0.1
burn_in = 20.0

[estimation]
scheme = "MMMM"

[run]
replicates = {R}
seed = 5
"""


def small_config(R=3, **kw):
    return MCConfig(model="linear", theta_star=ThetaBlocks([1.0], [1.0, 1.0], [1.0]), n=150, h=0.1,
                    burn_in=20.0, scheme="MMMM", replicates=R, seed=5, **kw)


# -- CSV -----------------------------------------------------------------------

def test_csv_round_trip(tmp_path, linear_path):
    f = tmp_path / "p.csv"
    write_path_csv(linear_path, f)
    back = read_path_csv(f)
    assert back.d_X == 1 and back.n == linear_path.n
    np.testing.assert_allclose(back.states, linear_path.states, rtol=0, atol=1e-15)
    assert back.h == pytest.approx(linear_path.h, rel=1e-12)
    assert f.read_bytes().endswith(b"\n") and b"\r" not in f.read_bytes()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=6, max_size=30))
def test_csv_round_trip_exact(tmp_path_factory, vals):
    k = len(vals) // 3
    states = np.array(vals[: 3 * k]).reshape(k, 3)
    p = SamplePath(h=0.25, states=states, d_X=2)
    f = tmp_path_factory.mktemp("rt") / "p.csv"
    write_path_csv(p, f)
    assert np.array_equal(read_path_csv(f).states, states)


def test_header_two_rough_coordinates(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("t,x1,x2,y1\n0,1,2,3\n0.5,1,2,3\n")
    p = read_path_csv(f)
    assert (p.d_X, p.d_Y, p.h) == (2, 1, 0.5)


@pytest.mark.parametrize("header", ["x1,y1", "t,y1,x1", "t,x1", "t,x2,y1", "t,x1,y1,z"])
def test_malformed_header(tmp_path, header):
    f = tmp_path / "p.csv"
    f.write_text(header + "\n0,1,2\n1,1,2\n")
    with pytest.raises(MalformedHeader):
        read_path_csv(f)


def test_shuffled_rows(tmp_path, linear_path):
    f = tmp_path / "p.csv"
    write_path_csv(linear_path, f)
    lines = f.read_text().splitlines()
    body = lines[1:]
    random.Random(0).shuffle(body)
    f.write_text("\n".join([lines[0], *body]) + "\n")
    with pytest.raises(NonEquispaced):
        read_path_csv(f)


def test_uneven_spacing(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("t,x1,y1\n0,0,0\n0.1,0,0\n0.2000001,0,0\n")
    with pytest.raises(NonEquispaced):
        read_path_csv(f)


def test_non_numeric_cell(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("t,x1,y1\n0,0,0\n0.1,abc,0\n")
    with pytest.raises(NonNumericCell) as info:
        read_path_csv(f)
    assert (info.value.row, info.value.col) == (3, 2)


# -- Monte Carlo ---------------------------------------------------------------

def test_mc_determinism_and_recompute(tmp_path):
    paths = []
    for run in ("a", "b"):
        rows, summ = tmp_path / f"rows_{run}.csv", tmp_path / f"summary_{run}.csv"
        run_mc(small_config(out_rows=str(rows), out_summary=str(summ)))
        paths.append((rows, summ))
    assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
    assert paths[0][1].read_bytes() == paths[1][1].read_bytes()
    res = load_mc_result(*paths[0])
    assert [s["n_ok"] for s in res.summary] == [3] * len(res.summary)
    header = paths[0][1].read_text().splitlines()[0]
    assert header == "estimator,coord,mean,sd,n_ok"


def test_mc_parallel_matches_serial(tmp_path):
    a = run_mc(small_config(R=4))
    b = run_mc(small_config(R=4, workers=2))
    assert a.summary == b.summary


def test_mc_single_replicate():
    res = run_mc(small_config(R=1))
    row = res.rows[0]["estimates"]
    for s in res.summary:
        assert s["mean"] == row[(s["estimator"], s["coord"])] and s["sd"] == 0.0
    assert "single_replicate" in res.flags


def test_mc_tampered_summary_detected(tmp_path):
    rows, summ = tmp_path / "r.csv", tmp_path / "s.csv"
    run_mc(small_config(out_rows=str(rows), out_summary=str(summ)))
    lines = summ.read_text().splitlines()
    parts = lines[1].split(",")
    parts[2] = repr(float(parts[2]) + 1e-6)
    lines[1] = ",".join(parts)
    summ.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="mean"):
        load_mc_result(rows, summ)


def _failing_on(indices):
    real = mc_module._estimate_one
    state = {"i": 0}

    def fake(args):
        state["i"] += 1
        if state["i"] in indices:
            raise StageError(3, "3", "forced")
        return real(args)

    return fake


def test_mc_failures_recorded(monkeypatch, tmp_path):
    monkeypatch.setattr(mc_module, "_estimate_one", _failing_on({2}))
    rows = tmp_path / "r.csv"
    with pytest.raises(MCFailure):
        run_mc(small_config(R=3, out_rows=str(rows)))
    text = rows.read_text().splitlines()
    assert text[2].split(",")[2] == "failed" and "forced" in text[2]


def test_mc_failure_cap_tolerates_few(monkeypatch):
    monkeypatch.setattr(mc_module, "_estimate_one", _failing_on({1}))
    res = run_mc(small_config(R=21))
    assert res.n_failed == 1 and res.summary[0]["n_ok"] == 20


def test_config_validation(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text(CONFIG.format(R=2))
    cfg = load_config(f)
    assert cfg.replicates == 2 and cfg.scheme == "MMMM" and cfg.n == 150
    with pytest.raises(ValueError):
        small_config(R=0)
    with pytest.raises(ValueError):
        MCConfig(model="linear", theta_star=ThetaBlocks([20.0], [1.0, 1.0], [1.0]), n=10, h=0.1)
    with pytest.raises(ValueError):
        MCConfig(model="linear", theta_star=ThetaBlocks([1.0], [1.0, 1.0], [1.0]), n=10, h=0.1, scheme="MMM")
    f.write_text("[model]\nname='linear'\n")
    with pytest.raises(ValueError, match="missing"):
        load_config(f)


# -- CLI -----------------------------------------------------------------------

def test_cli_simulate_and_estimate(tmp_path):
    p = tmp_path / "p.csv"
    rc = cli_main(["simulate", "--model", "linear", "--theta1", "1", "--theta2", "1,1", "--theta3", "1",
                   "--n", "1000", "--h", "0.1", "--seed", "7", "--out", str(p)])
    assert rc == 0
    assert len(p.read_text().splitlines()) == 1002
    r = tmp_path / "r.json"
    assert cli_main(["estimate", "--data", str(p), "--model", "linear", "--scheme", "MMMM",
                     "--report", str(r)]) == 0
    rep = json.loads(r.read_text())
    assert len(rep["stages"]) == 5
    assert set(rep["final"]) == {"theta1", "theta2", "theta3"}
    assert {"version", "config", "seeds"} <= set(rep["meta"])
    assert rep["gammas"]["Gamma11"] and rep["cis"]["theta2"]["half_width"]


def test_cli_estimate_with_grid(tmp_path, linear_path):
    p = tmp_path / "p.csv"
    write_path_csv(linear_path, p)
    r = tmp_path / "r.json"
    assert cli_main(["estimate", "--data", str(p), "--model", "linear", "--scheme", "BMBB",
                     "--grid", "101", "--report", str(r)]) == 0
    rep = json.loads(r.read_text())
    assert rep["stages"][0]["diagnostics"]["method"] == "quadrature"


def test_cli_usage_errors(tmp_path, capsys):
    assert cli_main(["mc", "--config", "missing.toml"]) == 1
    assert "missing.toml" in capsys.readouterr().err
    assert cli_main(["estimate", "--data", "nope.csv", "--model", "linear", "--report", "r.json"]) == 1
    assert "nope.csv" in capsys.readouterr().err
    assert cli_main(["simulate", "--model", "linear"]) == 1
    assert "usage" in capsys.readouterr().err
    assert cli_main([]) == 1
    assert cli_main(["simulate", "--model", "linear", "--theta1", "a", "--theta2", "1,1", "--theta3", "1",
                     "--n", "5", "--h", "0.1", "--out", str(tmp_path / "x.csv")]) == 1


def test_cli_runtime_error(tmp_path, capsys):
    f = tmp_path / "bad.csv"
    f.write_text("t,x1,y1\n0,0,0\n0.3,0,0\n0.1,0,0\n")
    assert cli_main(["estimate", "--data", str(f), "--model", "linear", "--report", str(tmp_path / "r.json")]) == 2
    assert "NonEquispaced" in capsys.readouterr().err


def test_cli_mc(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(CONFIG.format(R=2))
    rows, summ = tmp_path / "r.csv", tmp_path / "s.csv"
    assert cli_main(["mc", "--config", str(cfg), "--out-rows", str(rows), "--out-summary", str(summ)]) == 0
    assert len(rows.read_text().splitlines()) == 3
    load_mc_result(rows, summ)


def test_cli_check(tmp_path):
    out = tmp_path / "check.json"
    assert cli_main(["check", "--report", str(out)]) == 0
    assert json.loads(out.read_text())["passed"] is True
