"""Regenerate the synthetic scenario maps in ``scenarios/``.

All maps use 0.5 m cells.  Rectangles are given in world metres as
``(x0, y0, x1, y1)``; the map border is left free (out-of-map counts as
blocked anyway).
"""

from pathlib import Path

import numpy as np

from arcplan.world import OccupancyGrid, grid_to_pgm

RES = 0.5
OUT = Path(__file__).resolve().parent.parent / "scenarios"


def make(width_m, height_m, rects):
    cells = np.zeros((int(height_m / RES), int(width_m / RES)), dtype=bool)
    for x0, y0, x1, y1 in rects:
        cells[int(y0 / RES) : int(y1 / RES), int(x0 / RES) : int(x1 / RES)] = True
    return OccupancyGrid(cells, RES)


SCENARIOS = {
    "corridor": (
        make(100, 30, [(0, 0, 100, 8), (0, 22, 100, 30)]),
        dict(start=(5, 15, 0), goal=(65, 15)),
    ),
    "slalom": (
        make(130, 50, [(30, 0, 33, 22), (65, 28, 68, 50), (100, 0, 103, 22)]),
        dict(start=(5, 25, 0), goal=(120, 25)),
    ),
    "street": (
        make(
            140,
            100,
            [
                (0, 0, 55, 30), (85, 0, 140, 30),
                (0, 60, 55, 100), (85, 60, 140, 100),
                (25, 40, 29, 46), (62, 72, 67, 77),
            ],
        ),
        dict(start=(5, 45, 0), goal=(70, 92)),
    ),
    "open_field": (
        make(100, 100, [(30, 25, 36, 31), (60, 55, 66, 61), (45, 75, 50, 80), (75, 20, 80, 26)]),
        dict(start=(10, 10, 0), goal=(85, 85)),
    ),
    "wall": (
        make(100, 60, [(48, 0, 52, 38)]),
        dict(start=(10, 20, 0), goal=(90, 20)),
    ),
    "walled_goal": (
        make(80, 40, [(55, 10, 75, 12), (55, 28, 75, 30), (55, 10, 57, 30), (73, 10, 75, 30)]),
        dict(start=(5, 20, 0), goal=(65, 20), extra={"max_expansions": 300}),
    ),
}


def main():
    OUT.mkdir(exist_ok=True)
    for name, (grid, spec) in SCENARIOS.items():
        (OUT / f"{name}.pgm").write_bytes(grid_to_pgm(grid))
        sx, sy, st = spec["start"]
        gx, gy = spec["goal"]
        (OUT / f"{name}.scn").write_text(
            f"# synthetic {name} map, {grid.width}x{grid.height} cells\n"
            f"map = {name}.pgm\nresolution = {RES}\norigin_x = 0\norigin_y = 0\n"
            f"start_x = {sx}\nstart_y = {sy}\nstart_theta = {st}\n"
            f"goal_x = {gx}\ngoal_y = {gy}\n"
            + "".join(f"{k} = {v}\n" for k, v in spec.get("extra", {}).items())
        )


if __name__ == "__main__":
    main()
