import csv
import json

import numpy as np
import pytest

from mftraffic.bilevel import bilevel_objective
from mftraffic.cli import CSV_HEADER, main, read_reference_csv, run_command
from mftraffic.errors import ValidationError
from mftraffic.scenario import parse_scenario, unit_scenario


def scenario_file(tmp_path, **overrides):
    p = tmp_path / "scenario.json"
    p.write_text(json.dumps(unit_scenario(**overrides).to_dict()))
    return p


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_solve_unit(tmp_path):
    out = tmp_path / "out"
    code = main(["solve", "--scenario", str(scenario_file(tmp_path)), "--output", str(out)])
    assert code == 0
    data = rows(out / "equilibrium.csv")
    assert data[0] == CSV_HEADER
    assert data[0] == "t,rho_e1,rho_e2,rho_e3,rho_e4,rho_e5,z_p1,z_p2,z_p3,lambda,V0".split(",")
    assert len(data) == 2001 + 1
    summary = json.loads((out / "equilibrium.json").read_text())
    assert summary["converged"] and summary["iterations"] <= 2


def test_not_converged_exit_code(tmp_path):
    out = tmp_path / "out"
    sc = scenario_file(tmp_path, grid_points=100, alpha_prime=[0.05] * 5)
    assert run_command("solve", sc, output=out, max_iter=2) == 2
    assert (out / "equilibrium.csv").exists()
    assert json.loads((out / "equilibrium.json").read_text())["status"] == "max_iter"


def test_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"horizon": 2}))
    assert main(["solve", "--scenario", str(bad), "--output", str(tmp_path)]) == 1
    assert "SchemaError" in capsys.readouterr().err
    assert main(["solve", "--scenario", str(tmp_path / "missing.json")]) == 1


def test_usage_error_is_not_exit_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["launch", "--scenario", "x"])
    assert info.value.code == 1


def test_overrides_validated(tmp_path):
    sc = scenario_file(tmp_path, grid_points=50)
    assert run_command("solve", sc, output=tmp_path / "o", damping=1.5) == 1


def test_sweep(tmp_path):
    out = tmp_path / "sweep"
    sc = scenario_file(tmp_path, grid_points=100)
    assert run_command("sweep", sc, output=out, betas="0,1,5") == 0
    index = json.loads((out / "index.json").read_text())
    assert [r["beta"] for r in index["runs"]] == [0.0, 1.0, 5.0]
    for r in index["runs"]:
        assert len(rows(out / r["csv"])) == 102
    assert run_command("sweep", sc, output=out) == 1


def test_round_trip_and_bilevel(tmp_path):
    out = tmp_path / "truth"
    ap, a2 = [0.1] * 5, [0.1, 0.05, 0, 0, 0]
    sc_path = scenario_file(tmp_path, grid_points=80, alpha_prime=ap, alpha_second=a2)
    assert run_command("solve", sc_path, output=out) == 0
    sc = parse_scenario(sc_path)
    ref = read_reference_csv(out / "equilibrium.csv", sc)
    obj, ok = bilevel_objective(ap, a2, ref, sc)
    assert ok and obj <= 2 * sc.solver.tol

    box = tmp_path / "box.json"
    box.write_text(json.dumps({
        "alpha_prime": {"lower": ap, "upper": ap},
        "alpha_second": {"lower": a2, "upper": a2},
    }))
    bout = tmp_path / "bilevel"
    code = run_command("bilevel", sc_path, output=bout, reference=out / "equilibrium.csv", param_box=box)
    assert code == 0
    result = json.loads((bout / "bilevel.json").read_text())
    assert result["objective"] <= 2 * sc.solver.tol
    assert result["evaluations"] == 1
    assert len(rows(bout / "equilibrium.csv")) == 82


def test_bilevel_needs_inputs(tmp_path):
    assert run_command("bilevel", scenario_file(tmp_path, grid_points=50), output=tmp_path / "o") == 1


def test_reference_grid_mismatch(tmp_path):
    out = tmp_path / "a"
    run_command("solve", scenario_file(tmp_path, grid_points=50), output=out)
    other = unit_scenario(grid_points=60)
    with pytest.raises(ValidationError):
        read_reference_csv(out / "equilibrium.csv", other)


def test_deterministic_bytes(tmp_path):
    sc = scenario_file(tmp_path, grid_points=100, alpha_prime=[0.05] * 5)
    run_command("solve", sc, output=tmp_path / "a")
    run_command("solve", sc, output=tmp_path / "b")
    for name in ("equilibrium.csv", "equilibrium.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_values_round_trip_exactly(tmp_path):
    out = tmp_path / "o"
    run_command("solve", scenario_file(tmp_path, grid_points=60, alpha_prime=[0.05] * 5), output=out)
    data = np.array(rows(out / "equilibrium.csv")[1:], dtype=float)
    assert np.all(np.isfinite(data))
    assert data[0, 1:6].tolist() == [0.0] * 5
