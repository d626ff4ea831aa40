"""Occupancy grids, PGM I/O, collision queries and scenario files."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import parse_key_values
from .errors import ContractError, ParseError


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Row-major boolean grid, ``cells[j, i]`` is True for an obstacle.

    Row ``j = 0`` is the *bottom* of the world: cell ``(i, j)`` spans
    ``[ox + i*res, ox + (i+1)*res) x [oy + j*res, oy + (j+1)*res)``.
    """

    cells: np.ndarray
    resolution: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ContractError("grid must be a non-empty 2-D array")
        if not self.resolution > 0:
            raise ContractError("resolution must be positive")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """``(x_min, x_max, y_min, y_max)`` in world coordinates."""
        ox, oy = self.origin
        return ox, ox + self.width * self.resolution, oy, oy + self.height * self.resolution

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ox, oy = self.origin
        return math.floor((x - ox) / self.resolution), math.floor((y - oy) / self.resolution)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.origin == other.origin
            and np.array_equal(self.cells, other.cells)
        )

    @property
    def _padded(self):
        # obstacle ring around the map so out-of-bounds cells count as blocked
        cache = self.__dict__.get("_pad_cache")
        if cache is None:
            pad = 2
            cache = (pad, np.pad(self.cells, pad, constant_values=True))
            object.__setattr__(self, "_pad_cache", cache)
        return cache


_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pgm_tokens(data, pos, count):
    out = []
    for _ in range(count):
        m = _PGM_TOKEN.match(data, pos)
        if not m:
            raise ParseError("truncated PGM header", offset=pos)
        out.append((m.group(1), m.start(1)))
        pos = m.end()
    return out, pos


def _pgm_int(tok, offset, what):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"PGM {what} is not an integer: {tok!r}", offset=offset) from None


def read_pgm(data: bytes) -> tuple[np.ndarray, int]:
    """Decode a P2 or P5 image; returns ``(pixels[row, col], maxval)`` with row 0 at the top."""
    if len(data) < 2 or data[:2] not in (b"P2", b"P5"):
        raise ParseError("not a P2/P5 PGM file", offset=0)
    magic = data[:2]
    toks, pos = _pgm_tokens(data, 2, 3)
    width, height, maxval = (_pgm_int(t, off, what) for (t, off), what in zip(toks, ("width", "height", "maxval")))
    if width < 1 or height < 1:
        raise ParseError(f"invalid PGM size {width}x{height}", offset=toks[0][1])
    if not 0 < maxval <= 65535:
        raise ParseError(f"PGM maxval {maxval} out of range", offset=toks[2][1])
    n = width * height
    if magic == b"P5":
        if pos >= len(data) or not data[pos : pos + 1].isspace():
            raise ParseError("missing whitespace after PGM header", offset=pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = n * dtype.itemsize
        if len(data) - pos < need:
            raise ParseError(f"truncated PGM raster: need {need} bytes, have {len(data) - pos}", offset=len(data))
        pixels = np.frombuffer(data, dtype=dtype, count=n, offset=pos).astype(np.int64)
        offsets = pos + dtype.itemsize * np.arange(n)
    else:
        body = data[pos:]
        values, starts = [], []
        for m in re.finditer(rb"#[^\n]*|(\S+)", body):
            if m.group(1) is None:
                continue
            values.append(_pgm_int(m.group(1), pos + m.start(1), "pixel"))
            starts.append(pos + m.start(1))
            if len(values) == n:
                break
        if len(values) < n:
            raise ParseError(f"truncated PGM raster: need {n} values, have {len(values)}", offset=len(data))
        pixels = np.array(values, dtype=np.int64)
        offsets = np.array(starts)
    bad = np.flatnonzero(pixels > maxval)
    if bad.size:
        raise ParseError(f"PGM pixel value {pixels[bad[0]]} exceeds maxval {maxval}", offset=int(offsets[bad[0]]))
    return pixels.reshape(height, width), maxval


def load_grid(data: bytes, resolution: float = 1.0, origin=(0.0, 0.0)) -> OccupancyGrid:
    """Occupancy grid from PGM bytes: a pixel is an obstacle iff value < maxval/2."""
    pixels, maxval = read_pgm(data)
    # image row 0 is the top of the world
    return OccupancyGrid(pixels[::-1] < maxval / 2, resolution, origin)


def load_grid_file(path, resolution: float = 1.0, origin=(0.0, 0.0)) -> OccupancyGrid:
    return load_grid(Path(path).read_bytes(), resolution, origin)


def grid_to_pgm(grid: OccupancyGrid, binary: bool = True) -> bytes:
    img = np.where(grid.cells[::-1], 0, 255).astype(np.uint8)
    h, w = img.shape
    if binary:
        return b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()
    rows = "\n".join(" ".join(str(v) for v in row) for row in img)
    return f"P2\n{w} {h}\n255\n{rows}\n".encode()


def point_free(grid: OccupancyGrid, x: float, y: float) -> bool:
    i, j = grid.cell_of(x, y)
    if not (0 <= i < grid.width and 0 <= j < grid.height):
        return False
    return not grid.cells[j, i]


def trajectory_collides(grid: OccupancyGrid, states, margin: float = 0.0) -> bool:
    """True iff the polyline through ``states`` passes within ``margin`` of a
    blocked cell.

    Each consecutive pair is treated as a straight segment and tested exactly
    against every blocked cell near it (closed cells, disc margin). Anything
    outside the map is blocked.
    """
    if margin < 0:
        raise ContractError("margin must be non-negative")
    pts = np.asarray(states, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise ContractError("states must be a non-empty sequence of (X, Y, ...)")
    pts = pts[:, :2]
    if not np.all(np.isfinite(pts)):
        return True
    x0, x1, y0, y1 = grid.extent
    if np.any((pts[:, 0] < x0) | (pts[:, 0] >= x1) | (pts[:, 1] < y0) | (pts[:, 1] >= y1)):
        return True
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
    return bool(np.any(_segments_hit(grid, pts[:-1], pts[1:], margin)))


def _segments_hit(grid, a, b, margin):
    """Per-segment hit flags, vectorised over segments and nearby cells."""
    res = grid.resolution
    origin = np.array(grid.origin)
    pad, padded = grid._padded
    reach = margin + 1e-9 * res
    lo = np.floor((np.minimum(a, b) - reach - origin) / res).astype(int)
    hi = np.floor((np.maximum(a, b) + reach - origin) / res).astype(int)
    lo = np.maximum(lo, -pad)
    hi = np.minimum(hi, np.array([grid.width, grid.height]) + pad - 1)
    span = int(np.max(hi - lo)) + 1
    offs = np.arange(span)
    ii = lo[:, 0, None, None] + offs[None, None, :]  # (S, 1, W)
    jj = lo[:, 1, None, None] + offs[None, :, None]  # (S, W, 1)
    inside = (ii <= hi[:, 0, None, None]) & (jj <= hi[:, 1, None, None])
    ic = np.minimum(ii, grid.width + pad - 1) + pad
    jc = np.minimum(jj, grid.height + pad - 1) + pad
    blocked = padded[jc, ic] & inside
    if not blocked.any():
        return np.zeros(len(a), dtype=bool)
    seg_idx, jw, iw = np.nonzero(blocked)
    rx0 = origin[0] + ii[seg_idx, 0, iw] * res
    ry0 = origin[1] + jj[seg_idx, jw, 0] * res
    d = _segment_rect_distance(a[seg_idx], b[seg_idx], rx0, ry0, rx0 + res, ry0 + res)
    hits = np.zeros(len(a), dtype=bool)
    hits[seg_idx[d <= margin]] = True
    return hits


def _point_rect_distance(px, py, rx0, ry0, rx1, ry1):
    dx = np.maximum(np.maximum(rx0 - px, 0.0), px - rx1)
    dy = np.maximum(np.maximum(ry0 - py, 0.0), py - ry1)
    return np.hypot(dx, dy)


def _point_segment_distance(px, py, a, b):
    d = b - a
    L2 = d[:, 0] ** 2 + d[:, 1] ** 2
    safe = np.where(L2 > 0, L2, 1.0)
    t = np.clip(((px - a[:, 0]) * d[:, 0] + (py - a[:, 1]) * d[:, 1]) / safe, 0.0, 1.0)
    t = np.where(L2 > 0, t, 0.0)
    return np.hypot(px - (a[:, 0] + t * d[:, 0]), py - (a[:, 1] + t * d[:, 1]))


def _segment_rect_distance(a, b, rx0, ry0, rx1, ry1):
    """Distance between segments ``a[k]b[k]`` and rectangles ``k`` (row-aligned arrays)."""
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    # separating-axis test for intersection
    overlap = (
        (np.minimum(ax, bx) <= rx1) & (np.maximum(ax, bx) >= rx0)
        & (np.minimum(ay, by) <= ry1) & (np.maximum(ay, by) >= ry0)
    )
    nx, ny = ay - by, bx - ax
    corners = ((rx0, ry0), (rx1, ry0), (rx0, ry1), (rx1, ry1))
    side = [nx * (cx - ax) + ny * (cy - ay) for cx, cy in corners]
    smin = np.minimum(np.minimum(side[0], side[1]), np.minimum(side[2], side[3]))
    smax = np.maximum(np.maximum(side[0], side[1]), np.maximum(side[2], side[3]))
    intersects = overlap & (smin <= 0) & (smax >= 0)
    d = np.minimum(_point_rect_distance(ax, ay, rx0, ry0, rx1, ry1), _point_rect_distance(bx, by, rx0, ry0, rx1, ry1))
    for cx, cy in corners:
        d = np.minimum(d, _point_segment_distance(cx, cy, a, b))
    return np.where(intersects, 0.0, d)


def goal_distance(x: float, y: float, goal) -> float:
    return math.hypot(x - goal[0], y - goal[1])


SCENARIO_KEYS = {
    "map", "resolution", "origin_x", "origin_y",
    "start_x", "start_y", "start_theta", "goal_x", "goal_y",
    "goal_theta", "goal_v",
}


@dataclass
class Scenario:
    """Scenario file contents; ``overrides`` holds planner/connector keys verbatim."""

    map_path: Path
    start: tuple[float, float, float]
    goal: tuple[float, float]
    resolution: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)
    goal_theta: float | None = None
    goal_v: float | None = None
    overrides: dict[str, str] = field(default_factory=dict)
    name: str = "scenario"

    def load_grid(self) -> OccupancyGrid:
        try:
            data = self.map_path.read_bytes()
        except OSError as exc:
            raise ParseError(f"cannot read map {self.map_path}: {exc}") from None
        return load_grid(data, self.resolution, self.origin)

    def validate(self, grid: OccupancyGrid) -> None:
        if not point_free(grid, self.start[0], self.start[1]):
            raise ContractError(f"start {self.start[:2]} is not in free space")
        if not point_free(grid, *self.goal):
            raise ContractError(f"goal {self.goal} is not in free space")


def parse_scenario(text: str, base_dir=".", name: str = "scenario") -> Scenario:
    kv = parse_key_values(text, name)

    def num(key, default=None):
        if key not in kv:
            if default is None:
                raise ParseError(f"{name}: missing required key {key!r}")
            return default
        try:
            return float(kv[key])
        except ValueError:
            raise ParseError(f"{name}: {key!r} is not a number: {kv[key]!r}") from None

    if "map" not in kv:
        raise ParseError(f"{name}: missing required key 'map'")
    resolution = num("resolution", 1.0)
    if resolution <= 0:
        raise ParseError(f"{name}: resolution must be positive")
    return Scenario(
        map_path=Path(base_dir) / kv["map"],
        start=(num("start_x"), num("start_y"), num("start_theta", 0.0)),
        goal=(num("goal_x"), num("goal_y")),
        resolution=resolution,
        origin=(num("origin_x", 0.0), num("origin_y", 0.0)),
        goal_theta=num("goal_theta") if "goal_theta" in kv else None,
        goal_v=num("goal_v") if "goal_v" in kv else None,
        overrides={k: v for k, v in kv.items() if k not in SCENARIO_KEYS},
        name=name,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read scenario {path}: {exc}") from None
    return parse_scenario(text, path.parent, path.stem)
