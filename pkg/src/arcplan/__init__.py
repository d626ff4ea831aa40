"""Non-holonomic vehicle planning: bicycle dynamics, integrators, grid worlds,
arc-sampling tree search and a minimum-time goal connector."""

from .connector import ConnectorConfig, ConnectorResult, ShootingVariables, append_connection, connect, rollout
from .dynamics import PointMassState, ReducedState, VehicleParams, reduced_derivative
from .errors import (
    ArcPlanError,
    ContractError,
    DivergenceError,
    InfeasibleError,
    NoPathError,
    ParseError,
    PoleError,
    SolverFailure,
    StiffnessError,
)
from .integrators import SCHEMES, integrate, predict_stability, stability_experiment
from .planner import PlannerConfig, PlanResult, plan
from .world import OccupancyGrid, load_grid, load_scenario, trajectory_collides

__version__ = "0.1.0"
