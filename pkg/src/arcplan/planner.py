"""Arc-sampling tree search over the reduced bicycle model.

Each expansion takes the cheapest open node, aims the vehicle at points
spread over the arc in front of it (plus a few random points near the
goal), rolls the dynamics forward for a fixed horizon and keeps every
collision-free endpoint as a child with cost ``f = g + H``.
"""

from __future__ import annotations

import csv
import heapq
import math
import time
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .dynamics import ReducedState, VehicleParams, _reduced_rhs
from .errors import ContractError, NoPathError
from .world import OccupancyGrid, point_free, trajectory_collides


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2 * math.pi)
    if w <= 0:
        w += 2 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class PlannerConfig:
    n_arc_points: int = 7
    arc_radius: float | None = None  # None -> v_x * horizon
    n_goal_bias: int = 2
    goal_bias_radius: float | None = None  # None -> 2 * mindist
    horizon: float = 1.0
    step: float = 0.1
    mindist: float = 3.0
    margin: float | None = None  # None -> half the wheelbase
    max_expansions: int = 5000
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_arc_points < 1:
            raise ContractError("n_arc_points must be >= 1")
        if self.n_goal_bias < 0:
            raise ContractError("n_goal_bias must be >= 0")
        if not (self.step > 0 and self.horizon >= self.step):
            raise ContractError("need horizon >= step > 0")
        if self.mindist <= 0:
            raise ContractError("mindist must be positive")
        if self.max_expansions < 1:
            raise ContractError("max_expansions must be >= 1")
        for name in ("arc_radius", "goal_bias_radius"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ContractError(f"{name} must be positive")
        if self.margin is not None and self.margin < 0:
            raise ContractError("margin must be non-negative")

    def resolved(self, params: VehicleParams) -> "PlannerConfig":
        """Fill the parameter-dependent defaults."""
        return replace(
            self,
            arc_radius=self.arc_radius if self.arc_radius is not None else params.v_x * self.horizon,
            goal_bias_radius=self.goal_bias_radius if self.goal_bias_radius is not None else 2 * self.mindist,
            margin=self.margin if self.margin is not None else 0.5 * params.wheelbase,
        )

    @classmethod
    def from_overrides(cls, overrides: dict[str, str], base: "PlannerConfig | None" = None) -> "PlannerConfig":
        base = base or cls()
        kinds = {f.name: f.type for f in fields(cls)}
        changes = {}
        for key, value in overrides.items():
            if key not in kinds:
                continue
            changes[key] = int(value) if kinds[key] in (int, "int") else float(value)
        return replace(base, **changes)


@dataclass
class TreeNode:
    state: ReducedState
    parent: int  # -1 for the root
    g: float
    H: float
    f: float
    steer: float = 0.0
    segment: np.ndarray = field(default_factory=lambda: np.empty((0, 5)))


@dataclass
class Tree:
    nodes: list[TreeNode] = field(default_factory=list)
    open: set[int] = field(default_factory=set)
    _heap: list = field(default_factory=list, repr=False)

    def add(self, node: TreeNode) -> int:
        idx = len(self.nodes)
        if node.parent >= idx or (node.parent < 0 and idx != 0):
            raise ContractError("parent must precede child; only node 0 may be a root")
        self.nodes.append(node)
        if math.isfinite(node.f):
            self.open.add(idx)
            heapq.heappush(self._heap, (node.f, idx))
        return idx

    def pop_best(self) -> int | None:
        """Remove and return the open node with least f (ties: lowest index)."""
        while self._heap:
            _, idx = heapq.heappop(self._heap)
            if idx in self.open:
                self.open.discard(idx)
                return idx
        return None

    def __len__(self):
        return len(self.nodes)


@dataclass
class PlanResult:
    tree: Tree
    path: np.ndarray  # (n, 5) reduced states, start first
    reached: int
    expansions: int
    elapsed: float

    @property
    def final_state(self) -> ReducedState:
        return ReducedState(*self.path[-1])


def polyline_length(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))))


def point_selector(s, cfg: PlannerConfig, delta_max: float) -> list[tuple[float, float]]:
    """``n_arc_points`` targets on the arc of radius ``arc_radius`` spanning
    headings ``theta +- delta_max`` around the vehicle position."""
    X, Y, theta = s[0], s[1], s[2]
    R = cfg.arc_radius
    if R is None:
        raise ContractError("arc_radius unresolved; call cfg.resolved(params)")
    n = cfg.n_arc_points
    if n == 1:
        bearings = [theta]
    else:
        bearings = [theta - delta_max + 2 * delta_max * k / (n - 1) for k in range(n)]
    return [(X + R * math.cos(b), Y + R * math.sin(b)) for b in bearings]


def goal_biased_points(goal, cfg: PlannerConfig, rng: np.random.Generator) -> list[tuple[float, float]]:
    """Uniform samples in the disc of radius ``goal_bias_radius`` about ``goal``."""
    n = cfg.n_goal_bias
    if n == 0:
        return []
    radius = cfg.goal_bias_radius
    if radius is None:
        raise ContractError("goal_bias_radius unresolved; call cfg.resolved(params)")
    rho = radius * np.sqrt(rng.random(n))
    phi = 2 * math.pi * rng.random(n)
    return [(goal[0] + r * math.cos(p), goal[1] + r * math.sin(p)) for r, p in zip(rho, phi)]


def steer_toward(s, target, delta_max: float) -> float:
    dx, dy = target[0] - s[0], target[1] - s[1]
    if dx == 0 and dy == 0:
        raise ContractError("target coincides with the vehicle position")
    rel = wrap_angle(math.atan2(dy, dx) - s[2])
    return min(max(rel, -delta_max), delta_max)


def rollout_rk4(s, delta: float, params: VehicleParams, step: float, horizon: float) -> np.ndarray:
    """Classical RK4 under constant steer; returns ``n+1`` states including ``s``.

    Scalar arithmetic on tuples; this loop dominates planning time.
    """
    n = max(1, math.ceil(horizon / step - 1e-9))
    h = step
    out = np.empty((n + 1, 5))
    y = tuple(float(v) for v in s)
    out[0] = y
    rhs = _reduced_rhs
    for i in range(n):
        k1 = rhs(y, delta, params)
        k2 = rhs(tuple(a + 0.5 * h * b for a, b in zip(y, k1)), delta, params)
        k3 = rhs(tuple(a + 0.5 * h * b for a, b in zip(y, k2)), delta, params)
        k4 = rhs(tuple(a + h * b for a, b in zip(y, k3)), delta, params)
        y = tuple(a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))
        out[i + 1] = y
    return out


def shoot(
    s,
    targets: Sequence,
    grid: OccupancyGrid,
    goal,
    cfg: PlannerConfig,
    params: VehicleParams,
    parent: int = 0,
    parent_g: float = 0.0,
) -> list[TreeNode]:
    """Roll out one constant-steer segment per target and cost it.

    Colliding segments come back with ``f = inf``.
    """
    if not targets:
        raise ContractError("shoot needs at least one target")
    margin = cfg.margin if cfg.margin is not None else 0.5 * params.wheelbase
    out = []
    for target in targets:
        delta = steer_toward(s, target, params.delta_max)
        seg = rollout_rk4(s, delta, params, cfg.step, cfg.horizon)
        g = parent_g + polyline_length(seg)
        end = seg[-1]
        H = math.hypot(end[0] - goal[0], end[1] - goal[1])
        f = g + H
        if trajectory_collides(grid, seg, margin):
            H = f = math.inf
        out.append(TreeNode(ReducedState(*end), parent, g, H, f, delta, seg))
    return out


def extract_path(tree: Tree, leaf: int) -> np.ndarray:
    """Concatenate node segments from the root to ``leaf`` (junctions not repeated)."""
    if not 0 <= leaf < len(tree.nodes):
        raise ContractError(f"node index {leaf} out of range")
    chain = []
    idx = leaf
    while idx > 0:
        chain.append(idx)
        idx = tree.nodes[idx].parent
    root = tree.nodes[0]
    parts = [np.asarray(root.state, dtype=float)[None, :]]
    for idx in reversed(chain):
        parts.append(tree.nodes[idx].segment[1:])
    return np.vstack(parts)


def plan(
    grid: OccupancyGrid,
    start,
    goal,
    cfg: PlannerConfig | None = None,
    params: VehicleParams | None = None,
) -> PlanResult:
    """Grow the tree from ``start`` until a node ends within ``mindist`` of ``goal``.

    Raises :class:`NoPathError` (carrying the partial tree) when the open set
    empties or ``max_expansions`` is hit.
    """
    params = params or VehicleParams()
    cfg = (cfg or PlannerConfig()).resolved(params)
    start = ReducedState(*(float(v) for v in start))
    goal = (float(goal[0]), float(goal[1]))
    if not point_free(grid, start.X, start.Y):
        raise ContractError("start is not in free space")
    if not point_free(grid, *goal):
        raise ContractError("goal is not in free space")
    rng = np.random.default_rng(cfg.rng_seed)
    t0 = time.perf_counter()

    tree = Tree()
    H0 = math.hypot(start.X - goal[0], start.Y - goal[1])
    tree.add(TreeNode(start, -1, 0.0, H0, H0, 0.0, np.asarray(start, dtype=float)[None, :]))
    if H0 <= cfg.mindist:
        return PlanResult(tree, extract_path(tree, 0), 0, 0, time.perf_counter() - t0)

    expansions = 0
    while expansions < cfg.max_expansions:
        current = tree.pop_best()
        if current is None:
            break
        expansions += 1
        node = tree.nodes[current]
        targets = point_selector(node.state, cfg, params.delta_max) + goal_biased_points(goal, cfg, rng)
        targets = [t for t in targets if (t[0], t[1]) != (node.state.X, node.state.Y)]
        for child in shoot(node.state, targets, grid, goal, cfg, params, current, node.g):
            if not math.isfinite(child.f):
                continue
            idx = tree.add(child)
            if child.H <= cfg.mindist:
                path = extract_path(tree, idx)
                return PlanResult(tree, path, idx, expansions, time.perf_counter() - t0)
    reason = "open set exhausted" if not tree.open else f"max_expansions={cfg.max_expansions} reached"
    raise NoPathError(f"no path to goal: {reason} after {expansions} expansions", tree, expansions)


def write_path_csv(path_file, states: np.ndarray) -> None:
    with open(path_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_index", "X", "Y", "theta", "v_y", "r"])
        for k, s in enumerate(states):
            w.writerow([k] + [repr(float(v)) for v in s])


def write_tree_csv(path_file, tree: Tree) -> None:
    with open(path_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_index", "parent", "X", "Y", "g", "H", "f"])
        for k, n in enumerate(tree.nodes):
            w.writerow([k, n.parent] + [repr(float(v)) for v in (n.state.X, n.state.Y, n.g, n.H, n.f)])
