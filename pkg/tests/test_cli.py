import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from orbharm import cli
from orbharm.errors import SchemaError
from orbharm.report import write_csv
from orbharm.scenario import Scenario, locate, shipped_scenarios, validate_schema

FIXTURES = Path(__file__).parent / "fixtures"
SHIPPED = {
    "validate-atlas": ["cone_z3.json", "football.json"],
    "validate-map": ["cone_z3.json", "football.json", "disk_z2_boundary.json"],
    "metric-check": ["geometry.json"],
    "christoffel": ["geometry.json"],
    "tension": ["cone_z3.json"],
    "stabilizer": ["geometry.json"],
    "foliation-build": ["z4_to_z2.json"],
    "foliation-harness": ["z4_to_z2.json"],
}


def strip_clock(report):
    return {k: v for k, v in report.items() if k != "wall_clock"}


def read_rows(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.reader(lines))


@pytest.mark.parametrize("sub,scenario", [(s, f) for s, fs in SHIPPED.items() for f in fs])
def test_shipped_scenarios_pass(sub, scenario, tmp_path):
    code, report = cli.run(sub, scenario, out=tmp_path)
    assert code == cli.EXIT_OK, [c for c in report["checks"] if not c["passed"]]
    assert report["checks"] and all(c["passed"] for c in report["checks"])
    on_disk = json.loads((tmp_path / f"{sub}.json").read_text())
    assert on_disk["subcommand"] == sub and "seconds" in on_disk["wall_clock"]


def test_all_shipped_files_are_schema_valid():
    names = shipped_scenarios()
    assert {"cone_z3.json", "football.json", "z4_to_z2.json"} <= {Path(n).name for n in names}
    for n in names:
        validate_schema(json.loads(locate(n).read_text()))


def test_validate_atlas_reports_zero_residual(tmp_path):
    _, report = cli.run("validate-atlas", "cone_z3.json", out=tmp_path)
    assert all(c["residual"] < 1e-12 for c in report["checks"])


@pytest.fixture(scope="module")
def flow_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("flow")
    code = cli.main(["flow", "disk_z2_boundary.json", "--grid", "65", "--out", str(out)])
    return code, out


def test_flow_subcommand(flow_run):
    code, out = flow_run
    assert code == 0
    rows = read_rows(out / "flow_diagnostics.csv")
    assert rows[0] == ["iteration", "energy", "sup_tau", "equivariance_residual", "clamped"]
    energy = np.array([float(r[1]) for r in rows[1:]])
    assert np.all(np.diff(energy[5:]) <= 1e-12)
    grid = read_rows(out / "flow_grid.csv")
    assert len(grid) - 1 == 65 * 64
    report = json.loads((out / "flow.json").read_text())
    assert report["details"]["params"]["grid"] == 65


def test_determinism_modulo_wall_clock(tmp_path):
    for sub, scen in [("validate-map", "football.json"), ("foliation-harness", "z4_to_z2.json"),
                      ("christoffel", "geometry.json")]:
        _, r1 = cli.run(sub, scen, out=tmp_path / "a")
        _, r2 = cli.run(sub, scen, out=tmp_path / "b")
        assert json.dumps(strip_clock(r1), sort_keys=True) == json.dumps(strip_clock(r2), sort_keys=True)
        for f in (tmp_path / "a").glob("*.csv"):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_reports_use_full_precision(tmp_path):
    cli.run("christoffel", "geometry.json", out=tmp_path)
    row = read_rows(next(tmp_path.glob("christoffel_sphere.csv")))[1]
    assert any(len(v.replace("-", "").replace(".", "").split("e")[0]) >= 15 for v in row)


def test_corrupted_alpha_exits_one(tmp_path, capsys):
    code = cli.main(["validate-atlas", str(FIXTURES / "corrupted_football.json"), "--out", str(tmp_path)])
    assert code == cli.EXIT_FAILED
    report = json.loads((tmp_path / "validate-atlas.json").read_text())
    assert not report["passed"] and report["checks"][0]["residual"] > 1e-2
    assert "CheckFailed" in capsys.readouterr().err
    assert cli.main(["validate-atlas", str(FIXTURES / "explicit_football.json"), "--out", str(tmp_path)]) == 0


def broken(tmp_path, mutate):
    doc = json.loads((FIXTURES / "explicit_football.json").read_text())
    mutate(doc)
    p = tmp_path / "broken.json"
    p.write_text(json.dumps(doc))
    return p


@pytest.mark.parametrize("mutate,fragment", [
    (lambda d: d["atlases"]["football"]["charts"][0].update(generator=[]), "atlases/football/charts/0"),
    (lambda d: d.update(schema_version=2), "schema_version"),
    (lambda d: d["atlases"]["football"]["gluings"][0].update(target="Q"), "atlases/football/gluings/0/target"),
    (lambda d: d["atlases"]["football"]["charts"][1]["generators"][0].append([0.0, 1.0]),
     "atlases/football/charts/1/generators/0"),
], ids=["unknown-field", "version", "dangling-reference", "bad-matrix"])
def test_schema_errors_name_the_path(tmp_path, capsys, mutate, fragment):
    p = broken(tmp_path, mutate)
    with pytest.raises(SchemaError) as exc:
        Scenario.load(p)
    assert fragment in str(exc.value)
    assert cli.main(["validate-atlas", str(p), "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert fragment in capsys.readouterr().err


def test_missing_file_is_usage_error(tmp_path):
    assert cli.main(["validate-atlas", str(tmp_path / "nope.json")]) == cli.EXIT_USAGE


def test_shipped_name_without_suffix():
    from orbharm.scenario import locate
    assert locate("cone_z3") == locate("cone_z3.json")


def test_tension_csv_row_count(tmp_path):
    code, _ = cli.run("tension", FIXTURES / "box_tension.json", out=tmp_path)
    assert code == 0
    rows = read_rows(tmp_path / "tension_radius_squared_B.csv")
    assert rows[0] == ["x0", "x1", "tau0", "norm"] and len(rows) == 82
    assert all(abs(float(r[2]) - 4.0) < 1e-6 for r in rows[1:])


def test_empty_field_is_header_only(tmp_path):
    cli.emit_plot_data({"empty": (["x0", "x1", "value"], np.zeros((0, 3)), "nothing sampled")}, tmp_path)
    assert (tmp_path / "empty.csv").read_text() == "# nothing sampled\nx0,x1,value\n"
    write_csv(tmp_path / "e2.csv", ["a"], [])
    assert (tmp_path / "e2.csv").read_text() == "a\n"


def test_thread_env(monkeypatch, tmp_path):
    monkeypatch.setenv("ORBH_THREADS", "3")
    assert cli.thread_count() == 3
    _, threaded = cli.run("foliation-harness", "z4_to_z2.json", out=tmp_path / "t")
    monkeypatch.setenv("ORBH_THREADS", "1")
    assert cli.thread_count() == 1
    _, single = cli.run("foliation-harness", "z4_to_z2.json", out=tmp_path / "s")
    assert strip_clock(threaded) == strip_clock(single)


def test_overrides_reach_flow_params():
    args = cli.build_parser().parse_args(["flow", "x.json", "--dt", "1e-5", "--max-iter", "7", "--grid", "17"])
    p = cli.flow_params({"tol": 1e-6, "grid": 65}, args)
    assert (p.dt, p.max_iter, p.grid, p.tol) == (1e-5, 7, 17, 1e-6)
    with pytest.raises(ValueError):
        cli.flow_params({}, cli.build_parser().parse_args(["flow", "x.json", "--dt", "-1"]))


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "orbharm", "stabilizer", "geometry.json", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("stabilizer geometry: PASS")
