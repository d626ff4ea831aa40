"""Deterministic SVG output for maps, search trees and paths.

Colours follow the usual figure convention: obstacles black on white, the
explored tree in blue and the final path in red.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .planner import Tree
from .world import OccupancyGrid

PX_PER_M = 4.0


def tree_edges(tree: Tree | None) -> np.ndarray:
    """``(n, 3)`` rows of ``(parent, X, Y)`` for every node; the root has parent -1."""
    if tree is None or not tree.nodes:
        return np.empty((0, 3))
    return np.array([(n.parent, n.state.X, n.state.Y) for n in tree.nodes], dtype=float)


def _fmt(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _obstacle_runs(grid: OccupancyGrid):
    """Horizontal runs of blocked cells as ``(j, i0, i1)`` with ``i1`` exclusive."""
    for j in range(grid.height):
        row = np.r_[False, grid.cells[j], False].astype(np.int8)
        edges = np.flatnonzero(np.diff(row))
        for i0, i1 in zip(edges[::2], edges[1::2]):
            yield j, int(i0), int(i1)


def render_svg(
    grid: OccupancyGrid,
    tree,
    path,
    connector=None,
    start: Sequence[float] | None = None,
    goal: Sequence[float] | None = None,
    mindist: float = 3.0,
    scale: float = PX_PER_M,
) -> bytes:
    """Render to SVG bytes.

    ``tree`` is a :class:`Tree`, ``None`` or the array from :func:`tree_edges`;
    ``path`` and ``connector`` are state arrays whose first two columns are X, Y.
    The connector is drawn after ``path`` without repeating the junction.
    One ``<line class="tree">`` per non-root node, one ``<line class="path">``
    per path segment.
    """
    x0, x1, y0, y1 = grid.extent
    W, H = (x1 - x0) * scale, (y1 - y0) * scale

    def px(x, y):
        return _fmt((x - x0) * scale), _fmt((y1 - y) * scale)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(W)}" height="{_fmt(H)}" '
        f'viewBox="0 0 {_fmt(W)} {_fmt(H)}">',
        f'<rect class="free" x="0" y="0" width="{_fmt(W)}" height="{_fmt(H)}" fill="white"/>',
    ]
    res = grid.resolution * scale
    for j, i0, i1 in _obstacle_runs(grid):
        X, Y = px(x0 + i0 * grid.resolution, y0 + (j + 1) * grid.resolution)
        out.append(
            f'<rect class="obstacle" x="{X}" y="{Y}" width="{_fmt((i1 - i0) * res)}" '
            f'height="{_fmt(res)}" fill="black"/>'
        )

    edges = tree if isinstance(tree, np.ndarray) else tree_edges(tree)
    for parent, X, Y in edges:
        if parent < 0:
            continue
        ax, ay = px(edges[int(parent)][1], edges[int(parent)][2])
        bx, by = px(X, Y)
        out.append(f'<line class="tree" x1="{ax}" y1="{ay}" x2="{bx}" y2="{by}" stroke="blue" stroke-width="1"/>')

    pts = np.empty((0, 2))
    if path is not None and len(path):
        pts = np.asarray(path, dtype=float)[:, :2]
    if connector is not None and len(connector):
        conn = np.asarray(connector, dtype=float)[:, :2]
        pts = np.vstack([pts, conn[1:] if len(pts) else conn])
    for a, b in zip(pts[:-1], pts[1:]):
        ax, ay = px(*a)
        bx, by = px(*b)
        out.append(f'<line class="path" x1="{ax}" y1="{ay}" x2="{bx}" y2="{by}" stroke="red" stroke-width="2"/>')

    if start is not None:
        sx, sy = px(start[0], start[1])
        out.append(f'<circle class="start" cx="{sx}" cy="{sy}" r="4" fill="green"/>')
    if goal is not None:
        gx, gy = px(goal[0], goal[1])
        out.append(
            f'<circle class="goal-region" cx="{gx}" cy="{gy}" r="{_fmt(mindist * scale)}" '
            f'fill="none" stroke="green" stroke-width="1"/>'
        )
        out.append(f'<circle class="goal" cx="{gx}" cy="{gy}" r="3" fill="orange"/>')
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode()
