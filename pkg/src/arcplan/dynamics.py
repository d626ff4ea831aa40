"""Vehicle models: linear-tire bicycle (full and reduced) and point mass.

State layouts used throughout the package:

* reduced bicycle: ``[X, Y, theta, v_y, r]`` at constant longitudinal speed
* full bicycle:    ``[X, Y, theta, v_x, v_y, r]``
* point mass:      ``[X, Y, theta, v]`` driven by ``(F, delta)``

Angles are never wrapped here; callers wrap at output boundaries.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractError, ParseError

__all__ = [
    "VehicleParams",
    "ReducedState",
    "FullState",
    "SlipAngles",
    "TireForces",
    "PointMassState",
    "PointMassControl",
    "slip_angles",
    "lateral_forces",
    "reduced_derivative",
    "full_derivative",
    "point_mass_derivative",
    "lateral_system_matrix",
    "reduced_system",
    "load_params",
    "parse_params",
]


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameters of the single-track vehicle (SI units)."""

    m: float = 1500.0
    I_z: float = 2500.0
    L_f: float = 1.2
    L_r: float = 1.4
    C_alpha_f: float = 80000.0
    C_alpha_r: float = 80000.0
    v_x: float = 15.0
    delta_max: float = math.pi / 4

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ContractError(f"{f.name} must be finite, got {value}")
            if f.name != "delta_max" and value <= 0:
                raise ContractError(f"{f.name} must be positive, got {value}")
        if not 0 < self.delta_max <= math.pi / 2:
            raise ContractError(f"delta_max must lie in (0, pi/2], got {self.delta_max}")

    @property
    def wheelbase(self) -> float:
        return self.L_f + self.L_r

    def replace(self, **changes) -> "VehicleParams":
        return VehicleParams(**{**asdict(self), **changes})


# file key -> dataclass field
PARAM_KEYS = {
    "m": "m",
    "iz": "I_z",
    "lf": "L_f",
    "lr": "L_r",
    "c_alpha_f": "C_alpha_f",
    "c_alpha_r": "C_alpha_r",
    "vx": "v_x",
    "delta_max": "delta_max",
}


def parse_key_values(text: str, source: str = "<string>") -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def parse_params(text: str, source: str = "<string>", base: VehicleParams | None = None) -> VehicleParams:
    """Build :class:`VehicleParams` from parameter-file text; missing keys keep ``base`` values."""
    values = asdict(base or VehicleParams())
    for key, value in parse_key_values(text, source).items():
        if key not in PARAM_KEYS:
            raise ParseError(f"{source}: unknown parameter {key!r}")
        try:
            values[PARAM_KEYS[key]] = float(value)
        except ValueError:
            raise ParseError(f"{source}: parameter {key!r} is not a number: {value!r}") from None
    try:
        return VehicleParams(**values)
    except ContractError as exc:
        raise ParseError(f"{source}: {exc}") from None


def load_params(path) -> VehicleParams:
    path = Path(path)
    return parse_params(path.read_text(), str(path))


def format_params(params: VehicleParams) -> str:
    return "".join(f"{key} = {getattr(params, name)!r}\n" for key, name in PARAM_KEYS.items())


class ReducedState(NamedTuple):
    X: float
    Y: float
    theta: float
    v_y: float
    r: float


class FullState(NamedTuple):
    X: float
    Y: float
    theta: float
    v_x: float
    v_y: float
    r: float


class SlipAngles(NamedTuple):
    alpha_f: float
    alpha_r: float


class TireForces(NamedTuple):
    F_yf: float
    F_yr: float
    F_xf: float = 0.0
    F_xr: float = 0.0


class PointMassState(NamedTuple):
    X: float
    Y: float
    theta: float
    v: float


class PointMassControl(NamedTuple):
    F: float
    delta: float


def slip_angles(v_y: float, r: float, delta: float, params: VehicleParams, v_x: float | None = None) -> SlipAngles:
    """Front and rear tire slip angles (small-angle form).

    ``v_x`` defaults to the constant longitudinal speed in ``params``.
    """
    if v_x is None:
        v_x = params.v_x
    if v_x <= 0:
        raise ContractError(f"slip angles need a positive longitudinal speed, got {v_x}")
    return SlipAngles(
        (v_y + params.L_f * r) / v_x - delta,
        (v_y - params.L_r * r) / v_x,
    )


def lateral_forces(slip: SlipAngles, params: VehicleParams) -> TireForces:
    return TireForces(-params.C_alpha_f * slip.alpha_f, -params.C_alpha_r * slip.alpha_r, 0.0, 0.0)


def reduced_derivative(s: Sequence[float], delta: float, params: VehicleParams) -> np.ndarray:
    """Time derivative of the reduced bicycle state ``[X, Y, theta, v_y, r]``.

    Longitudinal tire forces are zero since ``v_x`` is held constant.
    """
    return np.array(_reduced_rhs(s, delta, params))


def _reduced_rhs(s, delta, p):
    # Inlined slip/force evaluation; this is the planner's inner loop.
    _, _, theta, v_y, r = s
    vx = p.v_x
    ct, st = math.cos(theta), math.sin(theta)
    cd = math.cos(delta)
    F_yf = -p.C_alpha_f * ((v_y + p.L_f * r) / vx - delta)
    F_yr = -p.C_alpha_r * ((v_y - p.L_r * r) / vx)
    return (
        vx * ct - v_y * st,
        vx * st + v_y * ct,
        r,
        (F_yf * cd + F_yr) / p.m - vx * r,
        (p.L_f * (F_yf * cd) - p.L_r * F_yr) / p.I_z,
    )


def full_derivative(
    s: Sequence[float], delta: float, F_xf: float, F_xr: float, params: VehicleParams
) -> np.ndarray:
    """Time derivative of the full bicycle state ``[X, Y, theta, v_x, v_y, r]``."""
    X, Y, theta, v_x, v_y, r = s
    slip = slip_angles(v_y, r, delta, params, v_x=v_x)
    forces = lateral_forces(slip, params)
    F_yf, F_yr = forces.F_yf, forces.F_yr
    m, cd, sd = params.m, math.cos(delta), math.sin(delta)
    return np.array(
        [
            v_x * math.cos(theta) - v_y * math.sin(theta),
            v_x * math.sin(theta) + v_y * math.cos(theta),
            r,
            -F_xf * cd / m - F_yf * sd / m - F_xr / m + v_y * r,
            (F_yf * cd - F_xf * sd + F_yr) / m - v_x * r,
            (params.L_f * (F_yf * cd - F_xf * sd) - params.L_r * F_yr) / params.I_z,
        ]
    )


def point_mass_derivative(s: Sequence[float], u: Sequence[float], params: VehicleParams) -> np.ndarray:
    """Kinematic point-mass model with wheelbase ``L_f + L_r``."""
    _, _, theta, v = s
    F, delta = u
    return np.array(
        [
            v * math.cos(theta),
            v * math.sin(theta),
            v * math.tan(delta) / params.wheelbase,
            F / params.m,
        ]
    )


def lateral_system_matrix(delta: float, params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Affine form of the lateral subsystem.

    Returns ``(A, b)`` such that ``d/dt [v_y, r] = A @ [v_y, r] + b`` holds
    exactly for fixed ``delta`` at the constant speed ``params.v_x``.
    """
    p = params
    vx, cd = p.v_x, math.cos(delta)
    cf, cr = p.C_alpha_f, p.C_alpha_r
    A = np.array(
        [
            [-(cf * cd + cr) / (p.m * vx), (cr * p.L_r - cf * p.L_f * cd) / (p.m * vx) - vx],
            [(cr * p.L_r - cf * p.L_f * cd) / (p.I_z * vx), -(cf * p.L_f**2 * cd + cr * p.L_r**2) / (p.I_z * vx)],
        ]
    )
    b = np.array([cf * delta * cd / p.m, p.L_f * cf * delta * cd / p.I_z])
    return A, b


def reduced_system(delta: float, params: VehicleParams):
    """Return ``f(s) -> ds/dt`` for the reduced model under constant steer."""

    def f(s):
        return np.array(_reduced_rhs(s, delta, params))

    return f
