import csv
import math
import re
import shutil
import subprocess
import sys

import numpy as np
import pytest

from arcplan.cli import (
    EXIT_INFEASIBLE,
    EXIT_NO_PATH,
    EXIT_OK,
    EXIT_PARSE,
    RunReport,
    main,
    parse_report,
    read_path_csv,
)
from arcplan.planner import polyline_length
from conftest import SCENARIOS


def _run(*argv):
    return main([str(a) for a in argv])


def _report(out):
    return parse_report((out / "report.txt").read_text())


@pytest.fixture(scope="module")
def corridor_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("corridor")
    code = _run("plan", "--scenario", SCENARIOS / "corridor.scn", "--out", out, "--tree-csv")
    return code, out


def _copy_scenario(tmp_path, name, extra=""):
    shutil.copy(SCENARIOS / f"{name}.pgm", tmp_path / f"{name}.pgm")
    text = (SCENARIOS / f"{name}.scn").read_text() + extra
    target = tmp_path / f"{name}.scn"
    target.write_text(text)
    return target


def test_corridor_success_artifacts(corridor_run):
    code, out = corridor_run
    assert code == EXIT_OK
    for name in ("report.txt", "plan.svg", "path.csv", "connector.csv", "tree.csv"):
        assert (out / name).stat().st_size > 0
    rep = _report(out)
    assert rep["reached"] == "true"
    assert rep["error"] == ""
    assert int(rep["expansions"]) > 0
    path = read_path_csv(out / "path.csv")
    assert float(rep["path_length"]) == pytest.approx(polyline_length(path), abs=1e-6)
    assert math.hypot(path[-1, 0] - 65, path[-1, 1] - 15) <= 0.2 * math.sqrt(2) + 1e-9


def test_report_round_trip():
    rep = RunReport(scenario="x", reached=True, expansions=3, t_f=np.float64(1.5))
    back = parse_report(rep.to_text())
    assert back["reached"] == "true" and back["t_f"] == "1.5" and back["expansions"] == "3"


def test_svg_colours_and_counts(corridor_run):
    _, out = corridor_run
    svg = (out / "plan.svg").read_text()
    n_nodes = sum(1 for _ in open(out / "tree.csv")) - 1
    n_path = sum(1 for _ in open(out / "path.csv")) - 1
    assert svg.count('class="tree"') == n_nodes - 1
    assert svg.count('class="path"') == n_path - 1
    assert 'fill="black"' in svg and 'fill="white"' in svg
    assert 'stroke="blue"' in svg and 'stroke="red"' in svg


def test_csv_values_are_plain_numbers(corridor_run):
    _, out = corridor_run
    for name in ("path.csv", "tree.csv", "connector.csv"):
        with open(out / name) as fh:
            for row in list(csv.reader(fh))[1:]:
                for cell in row:
                    assert cell == "" or re.fullmatch(r"-?[0-9.e+-]+|nan|inf", cell), (name, cell)


def test_walled_goal_exit_2_keeps_tree(tmp_path):
    code = _run("plan", "--scenario", SCENARIOS / "walled_goal.scn", "--out", tmp_path)
    assert code == EXIT_NO_PATH
    rep = _report(tmp_path)
    assert rep["reached"] == "false" and rep["error"]
    rows = list(csv.DictReader(open(tmp_path / "tree.csv")))
    assert len(rows) == int(rep["tree_nodes"]) > 1
    assert not (tmp_path / "path.csv").exists()
    assert (tmp_path / "plan.svg").exists()


def test_connector_infeasible_exit_3(tmp_path):
    # arriving at 25 m/s with a negligible force bound cannot be done
    scn = _copy_scenario(tmp_path, "corridor", "goal_v = 25\nF_max = 1e-6\nmax_solver_iters = 200\n")
    out = tmp_path / "out"
    code = _run("plan", "--scenario", scn, "--out", out)
    assert code == EXIT_INFEASIBLE
    rep = _report(out)
    assert rep["reached"] == "false" and "feasible" in rep["error"]
    assert (out / "tree.csv").exists() and (out / "plan_path.csv").exists()
    assert not (out / "path.csv").exists()


@pytest.mark.parametrize(
    "extra",
    ["bogus_key = 1\n", "mindist = abc\n", "N = 0\n"],
)
def test_bad_scenario_exit_1(tmp_path, extra):
    scn = _copy_scenario(tmp_path, "corridor", extra)
    assert _run("plan", "--scenario", scn, "--out", tmp_path / "out") == EXIT_PARSE


def test_missing_files_and_bad_flags_exit_1(tmp_path):
    assert _run("plan", "--scenario", tmp_path / "none.scn", "--out", tmp_path) == EXIT_PARSE
    assert _run("plan", "--scenario", SCENARIOS / "corridor.scn", "--out", tmp_path,
                "--params", tmp_path / "none.yaml") == EXIT_PARSE
    assert _run("stability", "--out", tmp_path, "--h-list", "0.1,x") == EXIT_PARSE
    assert _run("stability", "--out", tmp_path, "--h-list", "-0.1") == EXIT_PARSE
    assert _run("connect", "--from", "0,0,0", "--to", "1,1,1,1", "--out", tmp_path) == EXIT_PARSE
    with pytest.raises(SystemExit) as err:
        _run("plan", "--scenario")
    assert err.value.code == EXIT_PARSE


def test_bad_params_file_exit_1(tmp_path):
    bad = tmp_path / "p.yaml"
    bad.write_text("mass: -5\n")
    assert _run("plan", "--scenario", SCENARIOS / "corridor.scn", "--out", tmp_path,
                "--params", bad) == EXIT_PARSE


def test_repeated_runs_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / str(k)
        assert _run("plan", "--scenario", SCENARIOS / "slalom.scn", "--out", out, "--seed", 7) == EXIT_OK
        outs.append(out)
    for name in ("path.csv", "connector.csv", "plan.svg"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_seed_precedence(tmp_path, monkeypatch):
    scn = SCENARIOS / "corridor.scn"
    monkeypatch.setenv("PLANNER_SEED", "11")
    _run("plan", "--scenario", scn, "--out", tmp_path / "a")
    assert _report(tmp_path / "a")["seed"] == "11"
    _run("plan", "--scenario", scn, "--out", tmp_path / "b", "--seed", 5)
    assert _report(tmp_path / "b")["seed"] == "5"
    monkeypatch.setenv("PLANNER_SEED", "eleven")
    assert _run("plan", "--scenario", scn, "--out", tmp_path / "c") == EXIT_PARSE
    monkeypatch.delenv("PLANNER_SEED")
    _run("plan", "--scenario", scn, "--out", tmp_path / "d")
    assert _report(tmp_path / "d")["seed"] == "0"


def test_stability_csv(tmp_path):
    assert _run("stability", "--out", tmp_path, "--h-list", "0.01,0.3,0.5") == EXIT_OK
    rows = {(r["scheme"], float(r["h"])): r for r in csv.DictReader(open(tmp_path / "stability.csv"))}
    assert len(rows) == 8 * 3
    assert all(rows[(s, 0.01)]["verdict"] == "stable" for s, _ in rows)
    for s in ("euler_forward", "rk3", "rk4", "rk6", "adams_bashforth_4"):
        assert rows[(s, 0.5)]["verdict"] == "unstable"
    for s in ("euler_backward", "trapezoidal", "rk4"):
        assert rows[(s, 0.3)]["verdict"] == "stable"
    # the analytic column agrees wherever it is defined
    for r in rows.values():
        if r["oracle_verdict"]:
            assert r["oracle_verdict"] == r["verdict"]
    assert rows[("adams_bashforth_4", 0.5)]["oracle_verdict"] == ""


def test_connect_subcommand(tmp_path):
    code = _run("connect", "--from", "0,0,0,10", "--to", "20,5,0,10", "--out", tmp_path)
    assert code == EXIT_OK
    rep = parse_report((tmp_path / "report.txt").read_text())
    assert 0 < float(rep["t_f"]) < 5
    assert abs(float(rep["terminal_error_X"])) <= 0.2
    rows = list(csv.DictReader(open(tmp_path / "connector.csv")))
    assert rows[-1]["F"] == "" and rows[0]["F"] != ""
    code = _run("connect", "--from", "0,0,0,0", "--to", "0.5,0,0,25", "--out", tmp_path / "x")
    assert code == EXIT_INFEASIBLE


def test_render_reproduces_plan_svg(corridor_run, tmp_path):
    _, out = corridor_run
    code = _run("render", "--scenario", SCENARIOS / "corridor.scn", "--out", tmp_path,
                "--path-csv", out / "path.csv", "--tree-csv", out / "tree.csv")
    assert code == EXIT_OK
    # identical inputs render identically; the connector is already part of path.csv
    assert (tmp_path / "plan.svg").read_bytes() == (out / "plan.svg").read_bytes()


def test_render_without_tree_or_path(tmp_path):
    assert _run("render", "--scenario", SCENARIOS / "corridor.scn", "--out", tmp_path) == EXIT_OK
    svg = (tmp_path / "plan.svg").read_text()
    assert 'class="tree"' not in svg and 'class="path"' not in svg
    assert 'class="start"' in svg and 'class="goal"' in svg


def test_render_bad_csv_exit_1(tmp_path):
    bad = tmp_path / "p.csv"
    bad.write_text("t_index,X\n0,1\n")
    assert _run("render", "--scenario", SCENARIOS / "corridor.scn", "--out", tmp_path,
                "--path-csv", bad) == EXIT_PARSE


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "arcplan", "plan", "--scenario", str(SCENARIOS / "corridor.scn"),
         "--out", str(tmp_path)],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
    assert "reached=true" in proc.stdout
