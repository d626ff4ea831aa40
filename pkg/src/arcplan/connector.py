"""Minimum-time goal connection by single shooting over the point-mass model.

Decision variables are the final time and ``N`` piecewise-constant controls
``(F, delta)``; states follow from the explicit Euler recursion
``x[n+1] = x[n] + f(x[n], u[n]) * t_f / N``.  The problem

    min t_f  s.t.  box bounds on X, Y, v;  |delta| <= delta_max;  |F| <= F_max;
                   x[0] = s_init,  x[N] = s_final

is scalarised with an exact (L1) penalty and minimised by a seeded,
multi-start pattern search.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import PointMassState, VehicleParams, point_mass_derivative
from .errors import ContractError, DivergenceError, InfeasibleError
from .planner import PlanResult, polyline_length, wrap_angle

G0 = 9.81


@dataclass(frozen=True)
class ConnectorConfig:
    N: int = 20
    x_bounds: tuple[float, float] = (-math.inf, math.inf)
    y_bounds: tuple[float, float] = (-math.inf, math.inf)
    v_max: float = 25.0
    delta_max: float = math.pi / 4
    F_max: float | None = None  # None -> 10 * m * g0
    terminal_tol: tuple[float, float, float, float] = (0.2, 0.2, 0.05, 0.5)
    max_solver_iters: int = 4000
    n_starts: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ContractError("N must be >= 2")
        if not self.v_max > 0:
            raise ContractError("v_max must be positive")
        if not 0 < self.delta_max < math.pi / 2:
            raise ContractError("delta bound must lie in (0, pi/2)")
        if len(self.terminal_tol) != 4 or min(self.terminal_tol) <= 0:
            raise ContractError("terminal_tol needs four positive entries")
        if self.F_max is not None and self.F_max <= 0:
            raise ContractError("F_max must be positive")
        if self.max_solver_iters < 1 or self.n_starts < 1:
            raise ContractError("max_solver_iters and n_starts must be >= 1")

    def force_bound(self, params: VehicleParams) -> float:
        return self.F_max if self.F_max is not None else 10 * params.m * G0


@dataclass(frozen=True)
class ShootingVariables:
    t_f: float
    controls: np.ndarray  # (N, 2): columns F, delta

    def __post_init__(self):
        controls = np.array(self.controls, dtype=float)
        if controls.ndim != 2 or controls.shape[1] != 2:
            raise ContractError("controls must have shape (N, 2)")
        if not self.t_f > 0:
            raise ContractError("t_f must be positive")
        controls.setflags(write=False)
        object.__setattr__(self, "controls", controls)

    @property
    def N(self) -> int:
        return len(self.controls)


@dataclass
class ConnectorResult:
    t_f: float
    trajectory: np.ndarray  # (N+1, 4)
    controls: np.ndarray  # (N, 2)
    terminal_error: np.ndarray  # |dX|, |dY|, |dtheta| (wrapped), |dv|
    history: list[float] = field(default_factory=list)
    evaluations: int = 0

    @property
    def variables(self) -> ShootingVariables:
        return ShootingVariables(self.t_f, self.controls)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_f, len(self.trajectory))


# -- curvature-limited shortest paths (Dubins), used to seed the search -----

_TWO_PI = 2 * math.pi
STEP_TOL = 1e-5  # scaled poll step at which the search stops
_EPS = 1e-10  # tangency cases sit exactly on a word's validity boundary


def _mod2pi(a):
    a = a - _TWO_PI * math.floor(a / _TWO_PI)
    # round-off just below a full turn means no turn at all
    return 0.0 if _TWO_PI - a < 1e-9 else a


def _dubins_words(alpha, beta, d):
    """Normalised segment lengths ``(t, p, q)`` of the six Dubins words."""
    sa, sb, ca, cb = math.sin(alpha), math.sin(beta), math.cos(alpha), math.cos(beta)
    cab = math.cos(alpha - beta)
    out = {}
    p2 = 2 + d * d - 2 * cab + 2 * d * (sa - sb)
    if p2 >= -_EPS:
        tmp = math.atan2(cb - ca, d + sa - sb)
        out["LSL"] = (_mod2pi(tmp - alpha), math.sqrt(max(p2, 0.0)), _mod2pi(beta - tmp))
    p2 = 2 + d * d - 2 * cab + 2 * d * (sb - sa)
    if p2 >= -_EPS:
        tmp = math.atan2(ca - cb, d - sa + sb)
        out["RSR"] = (_mod2pi(alpha - tmp), math.sqrt(max(p2, 0.0)), _mod2pi(tmp - beta))
    p2 = -2 + d * d + 2 * cab + 2 * d * (sa + sb)
    if p2 >= -_EPS:
        p = math.sqrt(max(p2, 0.0))
        tmp = math.atan2(-ca - cb, d + sa + sb) - math.atan2(-2.0, p)
        out["LSR"] = (_mod2pi(tmp - alpha), p, _mod2pi(tmp - beta))
    p2 = -2 + d * d + 2 * cab - 2 * d * (sa + sb)
    if p2 >= -_EPS:
        p = math.sqrt(max(p2, 0.0))
        tmp = math.atan2(ca + cb, d - sa - sb) - math.atan2(2.0, p)
        out["RSL"] = (_mod2pi(alpha - tmp), p, _mod2pi(beta - tmp))
    c = (6 - d * d + 2 * cab + 2 * d * (sa - sb)) / 8
    if abs(c) <= 1 + _EPS:
        phi = math.atan2(ca - cb, d - sa + sb)
        p = _mod2pi(_TWO_PI - math.acos(min(max(c, -1.0), 1.0)))
        t = _mod2pi(alpha - phi + p / 2)
        out["RLR"] = (t, p, _mod2pi(alpha - beta - t + p))
    c = (6 - d * d + 2 * cab + 2 * d * (sb - sa)) / 8
    if abs(c) <= 1 + _EPS:
        phi = math.atan2(ca - cb, d + sa - sb)
        p = _mod2pi(_TWO_PI - math.acos(min(max(c, -1.0), 1.0)))
        t = _mod2pi(-alpha - phi + p / 2)
        out["LRL"] = (t, p, _mod2pi(beta - alpha - t + p))
    return out


def dubins_path(q0, q1, radius: float):
    """Shortest forward path with curvature at most ``1/radius`` between poses.

    Returns ``(length, segments)`` with ``segments`` a list of
    ``(curvature, length)`` pieces.
    """
    if radius <= 0:
        raise ContractError("turning radius must be positive")
    dx, dy = q1[0] - q0[0], q1[1] - q0[1]
    d = math.hypot(dx, dy) / radius
    th = _mod2pi(math.atan2(dy, dx)) if d > 0 else 0.0
    alpha, beta = _mod2pi(q0[2] - th), _mod2pi(q1[2] - th)
    best = None
    for word, lengths in _dubins_words(alpha, beta, d).items():
        total = sum(lengths)
        if best is None or total < best[0]:
            best = (total, word, lengths)
    sign = {"L": 1.0, "S": 0.0, "R": -1.0}
    segs = [(sign[c] / radius, l * radius) for c, l in zip(best[1], best[2]) if l > 0]
    return best[0] * radius, segs


def follow_segments(q0, segments):
    """Exact end pose after driving the ``(curvature, length)`` pieces."""
    x, y, th = (float(v) for v in q0[:3])
    for kappa, length in segments:
        if kappa == 0:
            x, y = x + length * math.cos(th), y + length * math.sin(th)
        else:
            th1 = th + kappa * length
            x += (math.sin(th1) - math.sin(th)) / kappa
            y -= (math.cos(th1) - math.cos(th)) / kappa
            th = th1
    return x, y, th


def min_turning_radius(cfg: ConnectorConfig, params: VehicleParams) -> float:
    return params.wheelbase / math.tan(cfg.delta_max)


def rollout(vars: ShootingVariables, s0, params: VehicleParams) -> np.ndarray:
    """Explicit-Euler state sequence (``N+1`` rows) for the given controls."""
    dt = vars.t_f / vars.N
    x = np.asarray(s0, dtype=float)
    out = np.empty((vars.N + 1, 4))
    out[0] = x
    for n, u in enumerate(vars.controls):
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + point_mass_derivative(x, u, params) * dt
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"rollout produced a non-finite state at step {n + 1}")
        out[n + 1] = x
    return out


def _rollout_batch(t_f, F, delta, s0, params):
    """Vectorised rollout: ``t_f`` (B,), ``F``/``delta`` (B, N) -> (B, N+1, 4)."""
    B, N = F.shape
    dt = t_f / N
    out = np.empty((B, N + 1, 4))
    X = np.full(B, float(s0[0]))
    Y = np.full(B, float(s0[1]))
    th = np.full(B, float(s0[2]))
    v = np.full(B, float(s0[3]))
    out[:, 0] = (X[0], Y[0], th[0], v[0])
    curv = np.tan(delta) / params.wheelbase
    acc = F / params.m
    for n in range(N):
        dX = v * np.cos(th)
        dY = v * np.sin(th)
        dth = v * curv[:, n]
        X = X + dX * dt
        Y = Y + dY * dt
        th = th + dth * dt
        v = v + acc[:, n] * dt
        out[:, n + 1, 0] = X
        out[:, n + 1, 1] = Y
        out[:, n + 1, 2] = th
        out[:, n + 1, 3] = v
    return out


def _terminal_residual(final, s_final):
    d = final[..., :] - np.asarray(s_final, dtype=float)
    d = np.array(d, dtype=float)
    d[..., 2] = np.mod(d[..., 2] + np.pi, 2 * np.pi) - np.pi
    # map -pi to +pi so the wrap lands in (-pi, pi]
    d[..., 2] = np.where(d[..., 2] == -np.pi, np.pi, d[..., 2])
    return np.abs(d)


def _bound_excess(traj, cfg):
    X, Y, v = traj[..., 0], traj[..., 1], traj[..., 3]
    parts = [
        cfg.x_bounds[0] - X, X - cfg.x_bounds[1],
        cfg.y_bounds[0] - Y, Y - cfg.y_bounds[1],
        -v, v - cfg.v_max,
    ]
    return np.stack([np.max(np.maximum(p, 0.0), axis=-1) for p in parts], axis=-1)


def evaluate(vars: ShootingVariables, s_init, s_final, cfg: ConnectorConfig, params: VehicleParams):
    """Objective ``t_f`` and the non-negative violation vector.

    Violations are ``[|dX|, |dY|, |dtheta|, |dv|]`` at the final node followed
    by the worst excess over ``X_min, X_max, Y_min, Y_max, v_min=0, v_max``.
    """
    traj = rollout(vars, s_init, params)
    return vars.t_f, np.concatenate([_terminal_residual(traj[-1], s_final), _bound_excess(traj, cfg)])


def _in_box(s, cfg):
    return (
        cfg.x_bounds[0] <= s[0] <= cfg.x_bounds[1]
        and cfg.y_bounds[0] <= s[1] <= cfg.y_bounds[1]
        and 0.0 <= s[3] <= cfg.v_max
    )


class _Problem:
    """Scaled search space: ``z = [t_f / t_scale, F / F_max, delta / delta_max]``."""

    T_MIN = 1e-3

    def __init__(self, s_init, s_final, cfg, params):
        self.s0 = np.asarray(s_init, dtype=float)
        self.s1 = np.asarray(s_final, dtype=float)
        self.cfg, self.params = cfg, params
        self.N = cfg.N
        self.F_max = cfg.force_bound(params)
        dist = math.hypot(*(self.s1[:2] - self.s0[:2]))
        self.t_scale = max(1.0, dist / cfg.v_max * 4)
        self.lo = np.concatenate([[self.T_MIN / self.t_scale], -np.ones(2 * self.N)])
        self.hi = np.concatenate([[np.inf], np.ones(2 * self.N)])
        tol = np.asarray(cfg.terminal_tol, dtype=float)
        # aim inside the tolerance box so the returned point has headroom
        self.slack = 0.5 * tol
        self.weight = 1.0 / tol
        self.evals = 0

    def unpack(self, Z):
        Z = np.atleast_2d(Z)
        t_f = Z[:, 0] * self.t_scale
        F = Z[:, 1 : 1 + self.N] * self.F_max
        delta = Z[:, 1 + self.N :] * self.cfg.delta_max
        return t_f, F, delta

    def pack(self, t_f, F, delta):
        return np.concatenate([[t_f / self.t_scale], np.asarray(F) / self.F_max, np.asarray(delta) / self.cfg.delta_max])

    def measures(self, Z):
        """Return (t_f, scaled infeasibility) for a batch of points."""
        t_f, F, delta = self.unpack(Z)
        self.evals += len(t_f)
        with np.errstate(all="ignore"):
            traj = _rollout_batch(t_f, F, delta, self.s0, self.params)
            res = _terminal_residual(traj[:, -1], self.s1)
            term = np.sum(np.maximum(res - self.slack, 0.0) * self.weight, axis=1)
            bounds = np.sum(_bound_excess(traj, self.cfg), axis=1)
            infeas = term + bounds
        infeas = np.where(np.isfinite(infeas), infeas, np.inf)
        return t_f, infeas

    def is_feasible(self, Z):
        vars = self.variables(Z)
        _, viol = evaluate(vars, self.s0, self.s1, self.cfg, self.params)
        tol = np.asarray(self.cfg.terminal_tol)
        return bool(np.all(viol[:4] <= tol) and np.all(viol[4:] <= 1e-9)), viol

    def variables(self, z):
        t_f, F, delta = self.unpack(z)
        return ShootingVariables(float(t_f[0]), np.column_stack([F[0], delta[0]]))


def _speed_knots(prob: _Problem, length: float, fast: bool):
    """Speeds at the N+1 knots and a nominal ``t_f``.

    ``fast`` gives an accelerate-cruise-decelerate profile at half the force
    bound and at most 90% of ``v_max``; otherwise speed varies linearly.
    """
    v0, v1 = prob.s0[3], prob.s1[3]
    a = 0.5 * prob.F_max / prob.params.m
    v_top = min(0.9 * prob.cfg.v_max, math.sqrt(a * length + 0.5 * (v0 * v0 + v1 * v1)))
    if not fast or v_top <= max(v0, v1):
        t_f = max(length / max(0.5 * (v0 + v1), 1.0), prob.T_MIN)
        return np.linspace(v0, v1, prob.N + 1), t_f
    t_up, t_down = (v_top - v0) / a, (v_top - v1) / a
    cruise = length - (v_top**2 - v0**2) / (2 * a) - (v_top**2 - v1**2) / (2 * a)
    t_f = t_up + max(cruise, 0.0) / v_top + t_down
    t = np.linspace(0.0, t_f, prob.N + 1)
    v = np.minimum.reduce([v0 + a * t, np.full_like(t, v_top), v1 + a * (t_f - t)])
    return v, t_f


def _path_guess(prob: _Problem, segments, length, fast: bool = False):
    """Controls that drive ``segments`` under the speed profile of :func:`_speed_knots`."""
    p, N = prob.params, prob.N
    v, t_f = _speed_knots(prob, length, fast)
    # Euler covers dt * v_k per interval; stretch time so that sums to ``length``
    covered = t_f / N * np.sum(v[:-1])
    if covered > 0:
        t_f *= length / covered
    t_f = max(t_f, prob.T_MIN)
    dt = t_f / N
    F = np.clip(p.m * np.diff(v) / dt, -prob.F_max, prob.F_max)
    arc = np.r_[0.0, np.cumsum(dt * v[:-1])]
    ends = np.cumsum([l for _, l in segments])
    heading = np.zeros(N + 1)
    for k, sk in enumerate(arc):
        turned, start = 0.0, 0.0
        for (kappa, l), end in zip(segments, ends):
            turned += kappa * (min(sk, end) - start) if sk > start else 0.0
            start = end
        heading[k] = turned
    ds = np.diff(arc)
    kappa = np.divide(np.diff(heading), ds, out=np.zeros(N), where=ds > 0)
    delta = np.clip(np.arctan(kappa * p.wheelbase), -prob.cfg.delta_max, prob.cfg.delta_max)
    return prob.pack(t_f, F, delta)


def _initial_guesses(prob: _Problem, rng: np.random.Generator, n: int):
    """Curvature-limited path guesses (fast and gentle speed profiles), a
    single-arc guess, a straight guess, then seeded perturbations of those."""
    s0, s1, cfg, p = prob.s0, prob.s1, prob.cfg, prob.params
    d = s1[:2] - s0[:2]
    dist = float(math.hypot(*d))
    guesses = []
    if dist > 0:
        # slightly wider than the tightest turn to leave room for Euler error
        R = 1.1 * min_turning_radius(cfg, p)
        length, segs = dubins_path(s0[:3], s1[:3], R)
        guesses.append(_path_guess(prob, segs, length, fast=True))
        guesses.append(_path_guess(prob, segs, length))
        chord = wrap_angle(math.atan2(d[1], d[0]) - s0[2])
        if abs(math.sin(chord)) < 1e-12:
            arc = [(0.0, dist)]
        else:
            kappa = 2 * math.sin(chord) / dist
            arc = [(kappa, abs(2 * chord / kappa))]
        guesses.append(_path_guess(prob, arc, sum(l for _, l in arc)))
    else:
        guesses.append(prob.pack(prob.T_MIN, np.zeros(prob.N), np.zeros(prob.N)))
    guesses.append(_path_guess(prob, [(0.0, max(dist, 1e-9))], max(dist, 1e-9)))
    base_count = len(guesses)
    while len(guesses) < n:
        base = guesses[len(guesses) % base_count]
        z = base + rng.normal(scale=0.15, size=base.size) * np.r_[0.5 * base[0], np.ones(base.size - 1)]
        guesses.append(np.clip(z, prob.lo, prob.hi))
    return [np.clip(g, prob.lo, prob.hi) for g in guesses[:n]]


def _pattern_search(prob, z, mu, rng, budget, history):
    """Best-improvement poll over +-coordinates, random directions and a pattern move."""
    dim = z.size
    t_f, inf = prob.measures(z[None, :])
    val = t_f[0] / prob.t_scale + mu * inf[0]
    step = 0.25
    iters = 0
    move = np.zeros(dim)
    while iters < budget and step > STEP_TOL:
        iters += 1
        rand = rng.normal(size=(8, dim))
        rand /= np.linalg.norm(rand, axis=1, keepdims=True)
        dirs = np.vstack([np.eye(dim), -np.eye(dim), rand, -rand])
        # pattern move: repeat and extend the last accepted displacement
        cand = np.clip(np.vstack([z + step * dirs, z + move, z + 2 * move]), prob.lo, prob.hi)
        t_c, inf_c = prob.measures(cand)
        vals = t_c / prob.t_scale + mu * inf_c
        k = int(np.argmin(vals))
        if vals[k] < val - 1e-15:
            move = cand[k] - z
            z, val = cand[k], vals[k]
            history.append(float(val))
            step = min(step * 2.0, 1.0)
        else:
            move[:] = 0.0
            step *= 0.5
    return z, val, iters


def connect(
    s_init: Sequence[float],
    s_final: Sequence[float],
    cfg: ConnectorConfig | None = None,
    params: VehicleParams | None = None,
) -> ConnectorResult:
    """Solve the minimum-time shooting problem from ``s_init`` to ``s_final``.

    Raises :class:`InfeasibleError` when either state lies outside the box or
    no start reaches the terminal tolerances within the iteration budget.
    """
    cfg = cfg or ConnectorConfig()
    params = params or VehicleParams()
    s_init = np.asarray(s_init, dtype=float)
    s_final = np.asarray(s_final, dtype=float)
    for name, s in (("initial", s_init), ("final", s_final)):
        if s.shape != (4,) or not np.all(np.isfinite(s)):
            raise ContractError(f"{name} state must be 4 finite numbers")
        if not _in_box(s, cfg):
            raise InfeasibleError(f"{name} state {tuple(s)} lies outside the state bounds")

    prob = _Problem(s_init, s_final, cfg, params)
    rng = np.random.default_rng(cfg.rng_seed)
    budget = max(1, cfg.max_solver_iters // cfg.n_starts)
    best = None  # (t_f, z)
    best_viol = None
    history: list[float] = []
    incumbent: list[float] = []
    for z in _initial_guesses(prob, rng, cfg.n_starts):
        mu, used = 1.0, 0
        while used < budget:
            z, _, iters = _pattern_search(prob, z, mu, rng, budget - used, history)
            used += iters
            feasible, viol = prob.is_feasible(z[None, :])
            if feasible:
                t_f = prob.unpack(z)[0][0]
                if best is None or t_f < best[0]:
                    best = (float(t_f), z.copy())
                    incumbent.append(float(t_f))
                break
            if best_viol is None or np.sum(viol) < np.sum(best_viol):
                best_viol = viol
            mu *= 10.0
            if mu > 1e6:
                break
    if best is None:
        raise InfeasibleError(
            f"no feasible connection within {cfg.max_solver_iters} iterations", violations=best_viol
        )
    vars = prob.variables(best[1][None, :])
    traj = rollout(vars, s_init, params)
    return ConnectorResult(
        t_f=float(vars.t_f),
        trajectory=traj,
        controls=np.array(vars.controls),
        terminal_error=_terminal_residual(traj[-1], s_final),
        history=incumbent,
        evaluations=prob.evals,
    )


def junction_state(reduced_state, params: VehicleParams) -> PointMassState:
    """Map a reduced bicycle state to the point-mass layout at speed ``v_x``."""
    return PointMassState(float(reduced_state[0]), float(reduced_state[1]), float(reduced_state[2]), params.v_x)


def default_goal_heading(junction, goal, cfg: ConnectorConfig | None = None,
                         params: VehicleParams | None = None, n: int = 72) -> float:
    """Arrival heading of the shortest curvature-limited path from ``junction``
    to ``goal`` (scanned over ``n`` candidate headings, ties to the first)."""
    cfg = cfg or ConnectorConfig()
    params = params or VehicleParams()
    if math.hypot(goal[0] - junction[0], goal[1] - junction[1]) == 0:
        return wrap_angle(float(junction[2]))
    R = min_turning_radius(cfg, params)
    best = None
    for k in range(n):
        th = -math.pi + _TWO_PI * (k + 1) / n
        length, _ = dubins_path(junction[:3], (goal[0], goal[1], th), R)
        if best is None or length < best[0] - 1e-12:
            best = (length, th)
    return best[1]


def connector_as_reduced(conn: ConnectorResult, params: VehicleParams) -> np.ndarray:
    """Connector states in the ``[X, Y, theta, v_y, r]`` layout (no slip: ``v_y = 0``)."""
    traj = conn.trajectory
    delta = np.r_[conn.controls[:, 1], conn.controls[-1, 1]]
    r = traj[:, 3] * np.tan(delta) / params.wheelbase
    return np.column_stack([traj[:, :3], np.zeros(len(traj)), r])


def append_connection(plan: PlanResult, conn: ConnectorResult, params: VehicleParams | None = None,
                      tol: float = 1e-9) -> np.ndarray:
    """Full start-to-goal path: planner states followed by the connector states."""
    params = params or VehicleParams()
    end = plan.path[-1]
    start = conn.trajectory[0]
    mismatch = max(abs(end[0] - start[0]), abs(end[1] - start[1]), abs(wrap_angle(end[2] - start[2])))
    if mismatch > tol:
        raise ContractError(f"connector starts {mismatch:.3g} away from the plan's final state")
    return np.vstack([plan.path, connector_as_reduced(conn, params)[1:]])


def full_path_length(plan: PlanResult, conn: ConnectorResult) -> float:
    return polyline_length(plan.path) + polyline_length(conn.trajectory)


def write_connector_csv(path_file, conn: ConnectorResult) -> None:
    times = conn.times
    with open(path_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "t", "X", "Y", "theta", "v", "F", "delta"])
        for n, (t, s) in enumerate(zip(times, conn.trajectory)):
            F, delta = conn.controls[n] if n < len(conn.controls) else ("", "")
            w.writerow([n, repr(float(t))] + [repr(float(v)) for v in s] + [
                repr(float(F)) if F != "" else "", repr(float(delta)) if delta != "" else ""])
