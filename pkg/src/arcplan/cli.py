"""Command-line front end.

Subcommands::

    arcplan plan --scenario S.scn --out DIR [--seed N] [--tree-csv] [--params P]
    arcplan stability --out DIR [--params P] [--h-list 0.01,0.1] [--horizon-T 10]
    arcplan connect --from X,Y,TH,V --to X,Y,TH,V --out DIR [--seed N]
    arcplan render --scenario S.scn --path-csv P.csv [--tree-csv T.csv] --out DIR

Exit status: 0 success, 1 bad input (parse or contract error), 2 no path,
3 connector infeasible.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import connector as conn_mod
from .connector import ConnectorConfig, append_connection, connect, default_goal_heading, junction_state
from .dynamics import VehicleParams, load_params
from .errors import ArcPlanError, ContractError, DivergenceError, InfeasibleError, NoPathError, ParseError
from .integrators import ONE_STEP, SCHEMES, default_h_sweep, predict_stability, stability_experiment, write_stability_csv
from .planner import PlannerConfig, plan, polyline_length, write_path_csv, write_tree_csv
from .render import render_svg, tree_edges
from .world import Scenario, load_scenario, trajectory_collides

EXIT_OK, EXIT_PARSE, EXIT_NO_PATH, EXIT_INFEASIBLE = 0, 1, 2, 3

CONNECTOR_KEYS = {"N": int, "v_max": float, "F_max": float, "max_solver_iters": int, "n_starts": int}
PLANNER_KEYS = {f.name for f in fields(PlannerConfig)}


@dataclass
class RunReport:
    scenario: str
    reached: bool = False
    expansions: int = 0
    tree_nodes: int = 0
    path_length: float = 0.0
    t_f: float = float("nan")
    seed: int = 0
    time_plan: float = 0.0
    time_connect: float = 0.0
    time_total: float = 0.0
    error: str = ""

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, float):
                value = repr(float(value))
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


def _floats(text: str, n: int | None = None, what: str = "value") -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ParseError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ParseError(f"{what}: expected {n} numbers, got {len(vals)}")
    return vals


def resolve_seed(flag: int | None, fallback: int = 0) -> int:
    """``--seed`` beats ``PLANNER_SEED`` which beats the scenario/default value."""
    if flag is not None:
        return flag
    env = os.environ.get("PLANNER_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ParseError(f"PLANNER_SEED is not an integer: {env!r}") from None
    return fallback


def _resolve_params(scn: Scenario | None, flag: str | None) -> VehicleParams:
    if flag:
        return _load_params(flag)
    if scn is not None and "params" in scn.overrides:
        return _load_params(scn.map_path.parent / scn.overrides["params"])
    return VehicleParams()


def _load_params(path) -> VehicleParams:
    try:
        return load_params(path)
    except OSError as exc:
        raise ParseError(f"cannot read parameter file {path}: {exc}") from None


def configs_from_scenario(scn: Scenario, seed_flag: int | None):
    """Planner and connector configs: defaults < scenario file < flags."""
    unknown = set(scn.overrides) - PLANNER_KEYS - set(CONNECTOR_KEYS) - {"params"}
    if unknown:
        raise ParseError(f"{scn.name}: unknown keys {sorted(unknown)}")
    try:
        pcfg = PlannerConfig.from_overrides({k: v for k, v in scn.overrides.items() if k in PLANNER_KEYS})
        cchanges = {k: CONNECTOR_KEYS[k](scn.overrides[k]) for k in CONNECTOR_KEYS if k in scn.overrides}
    except ValueError as exc:
        raise ParseError(f"{scn.name}: bad override value ({exc})") from None
    seed = resolve_seed(seed_flag, pcfg.rng_seed)
    pcfg = replace(pcfg, rng_seed=seed)
    return pcfg, cchanges, seed


def _write_tree(out: Path, tree) -> None:
    write_tree_csv(out / "tree.csv", tree)


def cmd_plan(scenario_path, out_dir, seed: int | None = None, tree_csv: bool = False,
             params_path: str | None = None) -> tuple[int, RunReport]:
    """Plan, connect and append; write artifacts into ``out_dir``."""
    t_start = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scn = load_scenario(scenario_path)
    params = _resolve_params(scn, params_path)
    pcfg, cchanges, seed = configs_from_scenario(scn, seed)
    grid = scn.load_grid()
    scn.validate(grid)
    report = RunReport(scenario=scn.name, seed=seed)
    rp = pcfg.resolved(params)

    def finish(code):
        report.time_total = time.perf_counter() - t_start
        (out / "report.txt").write_text(report.to_text())
        return code, report

    def svg(tree, path):
        (out / "plan.svg").write_bytes(
            render_svg(grid, tree, path, None, scn.start, scn.goal, rp.mindist)
        )

    start = (scn.start[0], scn.start[1], scn.start[2], 0.0, 0.0)
    t0 = time.perf_counter()
    try:
        result = plan(grid, start, scn.goal, pcfg, params)
    except NoPathError as exc:
        report.time_plan = time.perf_counter() - t0
        report.expansions = exc.expansions
        report.tree_nodes = len(exc.tree) if exc.tree is not None else 0
        report.error = str(exc)
        if exc.tree is not None:
            _write_tree(out, exc.tree)
            svg(exc.tree, None)
        print(f"error: {exc}", file=sys.stderr)
        return finish(EXIT_NO_PATH)
    report.time_plan = time.perf_counter() - t0
    report.expansions = result.expansions
    report.tree_nodes = len(result.tree)
    if tree_csv:
        _write_tree(out, result.tree)

    # connector: junction -> goal, inside the map box
    x0, x1, y0, y1 = grid.extent
    ccfg = ConnectorConfig(x_bounds=(x0, x1), y_bounds=(y0, y1), rng_seed=seed, **cchanges)
    s_init = junction_state(result.final_state, params)
    goal_theta = scn.goal_theta if scn.goal_theta is not None else default_goal_heading(s_init, scn.goal, ccfg, params)
    goal_v = scn.goal_v if scn.goal_v is not None else params.v_x
    s_final = (scn.goal[0], scn.goal[1], goal_theta, goal_v)
    t0 = time.perf_counter()
    try:
        conn = connect(s_init, s_final, ccfg, params)
        if trajectory_collides(grid, conn.trajectory, rp.margin):
            raise InfeasibleError("connector trajectory collides with an obstacle")
    except (InfeasibleError, DivergenceError) as exc:
        report.time_connect = time.perf_counter() - t0
        report.error = str(exc)
        _write_tree(out, result.tree)
        write_path_csv(out / "plan_path.csv", result.path)
        svg(result.tree, result.path)
        print(f"error: connector infeasible: {exc}", file=sys.stderr)
        return finish(EXIT_INFEASIBLE)
    report.time_connect = time.perf_counter() - t0

    full = append_connection(result, conn, params)
    write_path_csv(out / "path.csv", full)
    conn_mod.write_connector_csv(out / "connector.csv", conn)
    svg(result.tree, full)
    report.reached = True
    report.path_length = polyline_length(full)
    report.t_f = conn.t_f
    return finish(EXIT_OK)


def cmd_stability(out_dir, params_path: str | None = None, h_list: str | None = None,
                  horizon_T: float = 10.0) -> tuple[int, Path]:
    """Empirical verdicts for all schemes plus the analytic oracle for one-step schemes."""
    params = _load_params(params_path) if params_path else VehicleParams()
    hs = _floats(h_list, what="--h-list") if h_list else [float(h) for h in default_h_sweep()]
    if not hs or min(hs) <= 0:
        raise ParseError("--h-list: step sizes must be positive")
    if not horizon_T > 0:
        raise ParseError("--horizon-T must be positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    verdicts = stability_experiment(SCHEMES, hs, T=horizon_T, params=params)
    oracle = {(s, h): predict_stability(s, h, params=params) for s in ONE_STEP for h in hs}
    path = out / "stability.csv"
    write_stability_csv(path, verdicts, oracle)
    return EXIT_OK, path


def cmd_connect(s_from: str, s_to: str, out_dir, seed: int | None = None,
                params_path: str | None = None) -> tuple[int, object]:
    params = _load_params(params_path) if params_path else VehicleParams()
    s0 = _floats(s_from, 4, "--from")
    s1 = _floats(s_to, 4, "--to")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = ConnectorConfig(rng_seed=resolve_seed(seed))
    try:
        result = connect(s0, s1, cfg, params)
    except (InfeasibleError, DivergenceError) as exc:
        print(f"error: connector infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE, None
    conn_mod.write_connector_csv(out / "connector.csv", result)
    (out / "report.txt").write_text(
        f"t_f={float(result.t_f)!r}\n"
        + "".join(f"terminal_error_{k}={float(v)!r}\n" for k, v in zip(("X", "Y", "theta", "v"), result.terminal_error))
    )
    return EXIT_OK, result


def _read_csv(path, columns):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    try:
        return np.array([[float(r[c]) for c in columns] for r in rows], dtype=float).reshape(-1, len(columns))
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"{path}: malformed CSV ({exc})") from None


def read_path_csv(path) -> np.ndarray:
    return _read_csv(path, ["X", "Y", "theta", "v_y", "r"])


def read_tree_csv(path) -> np.ndarray:
    """Rows ``(parent, X, Y)``, the layout :func:`render_svg` accepts."""
    return _read_csv(path, ["parent", "X", "Y"])


def cmd_render(scenario_path, out_dir, path_csv=None, tree_csv=None) -> tuple[int, Path]:
    scn = load_scenario(scenario_path)
    pcfg, _, _ = configs_from_scenario(scn, None)
    grid = scn.load_grid()
    path = read_path_csv(path_csv) if path_csv else None
    tree = read_tree_csv(tree_csv) if tree_csv else None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "plan.svg"
    target.write_bytes(render_svg(grid, tree, path, None, scn.start, scn.goal, pcfg.mindist))
    return EXIT_OK, target


class _Parser(argparse.ArgumentParser):
    """Usage errors share the parse-error status instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="arcplan", description="Non-holonomic vehicle planning toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan, connect and render one scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--tree-csv", action="store_true", help="also write tree.csv on success")
    p.add_argument("--params")

    s = sub.add_parser("stability", help="integrator stability sweep")
    s.add_argument("--out", required=True)
    s.add_argument("--params")
    s.add_argument("--h-list")
    s.add_argument("--horizon-T", type=float, default=10.0)

    c = sub.add_parser("connect", help="standalone minimum-time connector")
    c.add_argument("--from", dest="s_from", required=True, metavar="X,Y,THETA,V")
    c.add_argument("--to", dest="s_to", required=True, metavar="X,Y,THETA,V")
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--params")

    r = sub.add_parser("render", help="re-render an SVG from CSV outputs")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--path-csv")
    r.add_argument("--tree-csv")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plan":
            code, report = cmd_plan(args.scenario, args.out, args.seed, args.tree_csv, args.params)
            sys.stdout.write(report.to_text())
            return code
        if args.command == "stability":
            code, path = cmd_stability(args.out, args.params, args.h_list, args.horizon_T)
            print(f"wrote {path}")
            return code
        if args.command == "connect":
            code, result = cmd_connect(args.s_from, args.s_to, args.out, args.seed, args.params)
            if result is not None:
                print(f"t_f={float(result.t_f)!r}")
            return code
        code, path = cmd_render(args.scenario, args.out, args.path_csv, args.tree_csv)
        print(f"wrote {path}")
        return code
    except (ParseError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ArcPlanError as exc:  # pragma: no cover - every module error is mapped above
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
