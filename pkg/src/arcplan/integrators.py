"""Fixed-step and adaptive ODE integrators plus linear stability analysis.

Eight schemes are available by name (see :data:`SCHEMES`).  One-step
schemes are described by Butcher tableaus; the same tableaus drive both the
time stepping and :func:`amplification_factor`, so the stability oracle and
the integrator cannot drift apart.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction as Fr
from typing import Callable, Iterable, Sequence

import numpy as np

from .dynamics import VehicleParams, lateral_system_matrix, reduced_system
from .errors import ContractError, DivergenceError, PoleError, SolverFailure, StiffnessError

SCHEMES = (
    "euler_forward",
    "euler_backward",
    "trapezoidal",
    "rk3",
    "rk4",
    "rk6",
    "dormand_prince",
    "adams_bashforth_4",
)
EXPLICIT = ("euler_forward", "rk3", "rk4", "rk6")
IMPLICIT = ("euler_backward", "trapezoidal")
ONE_STEP = EXPLICIT + IMPLICIT

ORDER = {
    "euler_forward": 1,
    "euler_backward": 1,
    "trapezoidal": 2,
    "rk3": 3,
    "rk4": 4,
    "rk6": 6,
    "adams_bashforth_4": 4,
    "dormand_prince": 5,
}

INTEGRATE_BOUND = 1e9
EXPERIMENT_BOUND = 1e6

Derivative = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Tableau:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @classmethod
    def from_rows(cls, a, b):
        a = np.array([[float(x) for x in row] for row in a])
        return cls(a=a, b=np.array([float(x) for x in b]), c=a.sum(axis=1))


def _lower(rows):
    n = len(rows) + 1
    a = [[0] * n for _ in range(n)]
    for i, row in enumerate(rows, 1):
        a[i][: len(row)] = row
    return a


TABLEAUS = {
    "euler_forward": Tableau.from_rows([[0]], [1]),
    "euler_backward": Tableau.from_rows([[1]], [1]),
    "trapezoidal": Tableau.from_rows([[0, 0], [Fr(1, 2), Fr(1, 2)]], [Fr(1, 2), Fr(1, 2)]),
    # Kutta's third-order method
    "rk3": Tableau.from_rows(_lower([[Fr(1, 2)], [-1, 2]]), [Fr(1, 6), Fr(2, 3), Fr(1, 6)]),
    "rk4": Tableau.from_rows(
        _lower([[Fr(1, 2)], [0, Fr(1, 2)], [0, 0, 1]]), [Fr(1, 6), Fr(1, 3), Fr(1, 3), Fr(1, 6)]
    ),
    # Butcher's seven-stage sixth-order method
    "rk6": Tableau.from_rows(
        _lower(
            [
                [Fr(1, 3)],
                [0, Fr(2, 3)],
                [Fr(1, 12), Fr(1, 3), Fr(-1, 12)],
                [Fr(-1, 16), Fr(9, 8), Fr(-3, 16), Fr(-3, 8)],
                [0, Fr(9, 8), Fr(-3, 8), Fr(-3, 4), Fr(1, 2)],
                [Fr(9, 44), Fr(-9, 11), Fr(63, 44), Fr(18, 11), 0, Fr(-16, 11)],
            ]
        ),
        [Fr(11, 120), 0, Fr(27, 40), Fr(27, 40), Fr(-4, 15), Fr(-4, 15), Fr(11, 120)],
    ),
}

# Dormand-Prince 5(4) coefficients with the 4th-order continuous extension.
DP_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
DP_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
DP_E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
DP_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    diverged: bool = False
    n_steps: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def max_norm(self) -> float:
        norms = np.linalg.norm(self.states, axis=1)
        return float(np.max(np.where(np.isfinite(norms), norms, np.inf)))


@dataclass(frozen=True)
class StabilityVerdict:
    scheme: str
    step: float
    verdict: str
    max_norm: float

    @property
    def stable(self) -> bool:
        return self.verdict == "stable"


def _check_scheme(scheme, allowed):
    if scheme not in allowed:
        raise ContractError(f"scheme {scheme!r} not in {allowed}")


def step_explicit(scheme: str, f: Derivative, s, h: float) -> np.ndarray:
    """One step of an explicit Runge-Kutta scheme.

    A non-finite result is returned as-is; callers decide whether it counts
    as divergence.
    """
    _check_scheme(scheme, EXPLICIT)
    if h <= 0:
        raise ContractError("step size must be positive")
    tab = TABLEAUS[scheme]
    s = np.asarray(s, dtype=float)
    k = []
    for i in range(len(tab.b)):
        y = s
        for j in range(i):
            if tab.a[i, j]:
                y = y + (h * tab.a[i, j]) * k[j]
        k.append(np.asarray(f(y), dtype=float))
    # sum(b) == 1, so writing the update relative to k1 keeps constant
    # derivatives exact regardless of how the weights round
    incr = k[0]
    for bi, ki in zip(tab.b[1:], k[1:]):
        if bi:
            incr = incr + bi * (ki - k[0])
    return s + h * incr


def _fd_jacobian(f, y, fy):
    n = y.size
    J = np.empty((n, n))
    for j in range(n):
        eps = 1.4901161193847656e-08 * max(1.0, abs(y[j]))
        yp = y.copy()
        yp[j] += eps
        J[:, j] = (np.asarray(f(yp), dtype=float) - fy) / eps
    return J


def _newton_implicit(scheme, f, s, h, tol, max_iter):
    if scheme == "euler_backward":
        weight, rhs = h, s
    else:
        weight, rhs = h / 2, s + (h / 2) * np.asarray(f(s), dtype=float)
    eye = np.eye(s.size)
    y = s + h * np.asarray(f(s), dtype=float)
    fy = np.asarray(f(y), dtype=float)
    G = y - rhs - weight * fy
    res = float(np.linalg.norm(G))
    for _ in range(max_iter):
        if res <= tol:
            return y, res
        J = eye - weight * _fd_jacobian(f, y, fy)
        try:
            dy = np.linalg.solve(J, -G)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        # backtracking keeps the residual from growing
        while lam > 1e-4:
            y_new = y + lam * dy
            fy_new = np.asarray(f(y_new), dtype=float)
            G_new = y_new - rhs - weight * fy_new
            res_new = float(np.linalg.norm(G_new))
            if math.isfinite(res_new) and res_new < res:
                break
            lam *= 0.5
        else:
            break
        y, fy, G, res = y_new, fy_new, G_new, res_new
    if res <= tol:
        return y, res
    raise SolverFailure(f"{scheme}: Newton iteration did not converge", res)


def step_implicit(
    scheme: str, f: Derivative, s, h: float, tol: float = 1e-10, max_iter: int = 50, _depth: int = 0
) -> np.ndarray:
    """One step of backward Euler or the trapezoidal rule.

    The stage equation is solved by damped Newton with a finite-difference
    Jacobian until the residual norm is at most ``tol * (1 + |s|)``.  On
    failure the step is split in two halves (up to 4 levels) before giving up
    with :class:`SolverFailure`.
    """
    _check_scheme(scheme, IMPLICIT)
    if h <= 0 or tol <= 0:
        raise ContractError("step size and tolerance must be positive")
    s = np.asarray(s, dtype=float)
    scaled_tol = tol * (1.0 + float(np.linalg.norm(s)))
    try:
        y, _ = _newton_implicit(scheme, f, s, h, scaled_tol, max_iter)
        return y
    except SolverFailure:
        if _depth >= 4:
            raise
    mid = step_implicit(scheme, f, s, h / 2, tol, max_iter, _depth + 1)
    return step_implicit(scheme, f, mid, h / 2, tol, max_iter, _depth + 1)


AB4_WEIGHTS = (-9.0, 37.0, -59.0, 55.0)


def step_ab4(f: Derivative, history: Sequence[np.ndarray], s, h: float) -> np.ndarray:
    """Four-step Adams-Bashforth update; ``history`` is oldest first and
    holds the derivative at the four most recent grid points (the last one
    at ``s``)."""
    if len(history) < 4:
        raise ContractError(f"Adams-Bashforth 4 needs 4 history entries, got {len(history)}")
    h4 = history[-4:]
    incr = sum(w * np.asarray(k, dtype=float) for w, k in zip(AB4_WEIGHTS, h4))
    return np.asarray(s, dtype=float) + (h / 24.0) * incr


def _dp_stages(f, t, y, h, k1):
    k = [k1]
    for i in range(1, 7):
        yi = y
        for j, a in enumerate(DP_A[i]):
            if a:
                yi = yi + (h * a) * k[j]
        k.append(np.asarray(f(yi), dtype=float))
    return k


def _initial_step(f, y, k1, T, rel_tol, abs_tol):
    # Hairer, Norsett & Wanner, starting step heuristic
    scale = abs_tol + rel_tol * np.abs(y)
    d0 = float(np.sqrt(np.mean((y / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((k1 / scale) ** 2)))
    if d1 == 0.0:
        return T
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, T)
    k2 = np.asarray(f(y + h0 * k1), dtype=float)
    d2 = float(np.sqrt(np.mean(((k2 - k1) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, T)


def integrate_adaptive(
    f: Derivative,
    s0,
    T: float,
    rel_tol: float = 1e-8,
    abs_tol: float = 1e-8,
    t_eval: Sequence[float] | None = None,
    h0: float | None = None,
    max_steps: int = 1_000_000,
) -> Trajectory:
    """Dormand-Prince 5(4) with PI step-size control.

    Without ``t_eval`` the accepted step points are returned; otherwise the
    solution is sampled at ``t_eval`` with the 4th-order dense output.
    """
    if rel_tol <= 0 or abs_tol <= 0:
        raise ContractError("tolerances must be positive")
    if T <= 0:
        raise ContractError("horizon must be positive")
    y = np.asarray(s0, dtype=float)
    t = 0.0
    k1 = np.asarray(f(y), dtype=float)
    h_min = 1e-12 * T
    if h0 is None:
        h0 = _initial_step(f, y, k1, T, rel_tol, abs_tol)
    h = min(h0, T)

    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(t_eval) < 0) or t_eval[0] < 0 or t_eval[-1] > T * (1 + 1e-12):
            raise ContractError("t_eval must be sorted within [0, T]")
    out_t, out_y = [], []
    eval_idx = 0
    if t_eval is None:
        out_t.append(0.0)
        out_y.append(y.copy())
    else:
        while eval_idx < len(t_eval) and t_eval[eval_idx] <= 0.0:
            out_t.append(t_eval[eval_idx])
            out_y.append(y.copy())
            eval_idx += 1

    beta, expo = 0.04, 0.2 - 0.04 * 0.75
    err_old = 1e-4
    n_steps = 0
    while t < T:
        if n_steps >= max_steps:
            raise StiffnessError(f"exceeded {max_steps} steps at t={t}")
        last = t + h >= T * (1 - 1e-14)
        if last:
            h = T - t
        k = _dp_stages(f, t, y, h, k1)
        y_new = y + h * sum(b * ki for b, ki in zip(DP_B, k) if b)
        err_vec = h * sum(e * ki for e, ki in zip(DP_E, k) if e)
        scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if not math.isfinite(err):
            err = 1e10
        if err <= 1.0:
            t_new = T if last else t + h
            if t_eval is None:
                out_t.append(t_new)
                out_y.append(y_new.copy())
            else:
                K = np.array(k)
                while eval_idx < len(t_eval) and t_eval[eval_idx] <= t_new * (1 + 1e-14):
                    theta = (t_eval[eval_idx] - t) / h
                    powers = np.array([theta, theta**2, theta**3, theta**4])
                    out_t.append(t_eval[eval_idx])
                    out_y.append(y + h * (K.T @ (DP_P @ powers)))
                    eval_idx += 1
            t, y, k1 = t_new, y_new, k[6]
            n_steps += 1
            fac = 0.9 * max(err, 1e-10) ** (-expo) * err_old**beta
            err_old = max(err, 1e-4)
            h = h * min(10.0, max(0.2, fac))
        else:
            h = h * max(0.2, 0.9 * err ** (-0.2))
        if h < h_min and t < T:
            raise StiffnessError(f"step size {h:.3e} fell below {h_min:.3e} at t={t}")
    return Trajectory(np.array(out_t), np.array(out_y), False, n_steps)


def _grid(h, T):
    n = max(1, math.ceil(T / h - 1e-9))
    return n, h * np.arange(n + 1)


def integrate(
    scheme: str,
    f: Derivative,
    s0,
    h: float,
    T: float,
    bound: float = INTEGRATE_BOUND,
    tol: float = 1e-10,
) -> Trajectory:
    """March ``ceil(T/h)`` fixed steps of ``scheme`` from ``s0``.

    Stops early with ``diverged=True`` once the state norm exceeds ``bound``
    or turns non-finite.  ``dormand_prince`` runs adaptively with initial
    step ``h`` and is sampled on the same fixed grid.
    """
    _check_scheme(scheme, SCHEMES)
    if h <= 0:
        raise ContractError("step size must be positive")
    if T < h * (1 - 1e-12):
        raise ContractError("horizon must be at least one step")
    n, times = _grid(h, T)
    s = np.asarray(s0, dtype=float)

    if scheme == "dormand_prince":
        traj = integrate_adaptive(f, s, times[-1], 1e-8, 1e-8, t_eval=times, h0=h)
        return traj

    states = np.empty((n + 1, s.size))
    states[0] = s
    history: list[np.ndarray] = []
    if scheme == "adams_bashforth_4":
        history.append(np.asarray(f(s), dtype=float))
    diverged = False
    done = 0
    for i in range(n):
        if scheme in EXPLICIT:
            s = step_explicit(scheme, f, s, h)
        elif scheme in IMPLICIT:
            s = step_implicit(scheme, f, s, h, tol=tol)
        elif i < 3:
            # Adams-Bashforth start-up
            s = step_explicit("rk4", f, s, h)
        else:
            s = step_ab4(f, history, s, h)
        if scheme == "adams_bashforth_4":
            history.append(np.asarray(f(s), dtype=float))
            if len(history) > 4:
                history.pop(0)
        states[i + 1] = s
        done = i + 1
        norm = float(np.linalg.norm(s))
        if not math.isfinite(norm) or norm > bound:
            diverged = True
            break
    return Trajectory(times[: done + 1].copy(), states[: done + 1].copy(), diverged, done)


def amplification_factor(scheme: str, z: complex) -> complex:
    """Stability function ``R(z) = 1 + z b^T (I - zA)^{-1} 1`` of a one-step scheme."""
    _check_scheme(scheme, ONE_STEP)
    tab = TABLEAUS[scheme]
    n = len(tab.b)
    M = np.eye(n, dtype=complex) - z * tab.a
    if abs(np.linalg.det(M)) < 1e-14:
        raise PoleError(f"{scheme} has a pole at z={z}")
    return complex(1 + z * (tab.b @ np.linalg.solve(M, np.ones(n, dtype=complex))))


def predict_stability(
    scheme: str, h: float, delta: float = math.pi / 4, params: VehicleParams | None = None
) -> StabilityVerdict:
    """Analytic verdict from the eigenvalues of the lateral subsystem.

    ``max_norm`` carries ``max |R(h * lambda_i)|``.
    """
    _check_scheme(scheme, ONE_STEP)
    params = params or VehicleParams()
    A, _ = lateral_system_matrix(delta, params)
    eig = np.linalg.eigvals(A)
    try:
        worst = max(abs(amplification_factor(scheme, h * lam)) for lam in eig)
    except PoleError:
        worst = math.inf
    return StabilityVerdict(scheme, h, "stable" if worst <= 1.0 else "unstable", float(worst))


def stability_boundary(scheme: str, delta: float = math.pi / 4, params: VehicleParams | None = None,
                       h_max: float = 10.0) -> float:
    """Largest step (up to ``h_max``) keeping ``predict_stability`` stable, by bisection.

    Returns ``inf`` for schemes stable on the whole interval.
    """
    if predict_stability(scheme, h_max, delta, params).stable:
        return math.inf
    lo, hi = 0.0, h_max
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if predict_stability(scheme, mid, delta, params).stable:
            lo = mid
        else:
            hi = mid
    return lo


def default_h_sweep(n: int = 29) -> np.ndarray:
    """Log-spaced step sizes over [1e-3, 1] s."""
    return np.logspace(-3, 0, n)


def stability_experiment(
    schemes: Iterable[str],
    h_values: Iterable[float],
    T: float = 10.0,
    params: VehicleParams | None = None,
    delta: float = math.pi / 4,
    s0=None,
) -> list[StabilityVerdict]:
    """Integrate the reduced model under constant steer for every (scheme, h).

    A cell is unstable iff the maximum state norm exceeds 1e6.
    """
    if T <= 0:
        raise ContractError("horizon must be positive")
    params = params or VehicleParams()
    f = reduced_system(delta, params)
    s0 = np.zeros(5) if s0 is None else np.asarray(s0, dtype=float)
    out = []
    for scheme in schemes:
        for h in h_values:
            h = float(h)
            try:
                traj = integrate(scheme, f, s0, h, max(T, h), bound=EXPERIMENT_BOUND)
                max_norm = traj.max_norm()
            except (SolverFailure, StiffnessError, DivergenceError):
                max_norm = math.inf
            verdict = "unstable" if max_norm > EXPERIMENT_BOUND else "stable"
            out.append(StabilityVerdict(scheme, h, verdict, max_norm))
    return out


def write_stability_csv(path, verdicts: Sequence[StabilityVerdict], oracle: dict | None = None) -> None:
    """Write ``scheme,h,verdict,max_norm``; with ``oracle`` (keyed by
    ``(scheme, h)``) two extra columns carry the analytic verdict."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["scheme", "h", "verdict", "max_norm"]
        if oracle is not None:
            header += ["oracle_verdict", "oracle_max_abs_R"]
        writer.writerow(header)
        for v in verdicts:
            row = [v.scheme, repr(float(v.step)), v.verdict, repr(float(v.max_norm))]
            if oracle is not None:
                pred = oracle.get((v.scheme, v.step))
                row += [pred.verdict, repr(float(pred.max_norm))] if pred else ["", ""]
            writer.writerow(row)


@dataclass
class OrderStudy:
    scheme: str
    steps: np.ndarray
    errors: np.ndarray
    usable: np.ndarray  # bool mask of points used in the fit
    reference_error: float
    slope: float  # nan when fewer than two usable points


def order_study(
    scheme: str,
    delta: float = 0.1,
    T: float = 2.0,
    h_values: Sequence[float] | None = None,
    params: VehicleParams | None = None,
    s0=None,
    ref_tol: float = 1e-10,
    floor_factor: float = 10.0,
) -> OrderStudy:
    """Empirical convergence order of ``scheme`` on the reduced model.

    Errors are final-state distances to a Dormand-Prince reference at
    ``ref_tol``.  That reference is itself checked against a run at
    ``ref_tol * 1e-3``; only steps whose error exceeds ``floor_factor``
    times the reference's own error enter the least-squares log-log fit.
    """
    _check_scheme(scheme, SCHEMES)
    params = params or VehicleParams()
    f = reduced_system(delta, params)
    s0 = np.zeros(5) if s0 is None else np.asarray(s0, dtype=float)
    if h_values is None:
        h_values = 0.0125 * 2.0 ** -np.arange(6)
    hs = np.asarray(h_values, dtype=float)
    ref = integrate_adaptive(f, s0, T, ref_tol, ref_tol).final
    tight = integrate_adaptive(f, s0, T, ref_tol * 1e-3, ref_tol * 1e-3).final
    ref_err = float(np.linalg.norm(ref - tight))
    errors = np.array([float(np.linalg.norm(integrate(scheme, f, s0, h, T).final - ref)) for h in hs])
    usable = np.isfinite(errors) & (errors >= floor_factor * ref_err)
    slope = math.nan
    if usable.sum() >= 2:
        slope = float(np.polyfit(np.log(hs[usable]), np.log(errors[usable]), 1)[0])
    return OrderStudy(scheme, hs, errors, usable, ref_err, slope)
